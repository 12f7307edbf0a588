//! Gestalt grouping stimuli with ground-truth masks.
//!
//! Each stimulus is a list of analytic shapes. Painted shapes make up the
//! raster; labeled shapes make up the mask. A pixel belongs to a shape when
//! its center lies inside it. Grouping principles (proximity, similarity,
//! enclosure, connection, continuity) label elements by group and ignore the
//! background; figure-ground principles (closure, Kanizsa) label the
//! perceived figure 1 and everything else 0.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ProcImage, Provenance};
use crate::error::{Error, Result};
use crate::segmentation::{LabelMask, IGNORE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Principle {
    Closure,
    Kanizsa,
    Connection,
    Continuity,
    Enclosure,
    Proximity,
    Similarity,
}

impl Principle {
    pub fn all() -> [Principle; 7] {
        [
            Principle::Closure,
            Principle::Kanizsa,
            Principle::Connection,
            Principle::Continuity,
            Principle::Enclosure,
            Principle::Proximity,
            Principle::Similarity,
        ]
    }
}

/// Geometry of each principle. Lengths are in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "principle", rename_all = "kebab-case")]
pub enum GestaltParams {
    /// Incomplete ring; the mask is the full disk it outlines.
    Closure {
        radius: f64,
        thickness: f64,
        gaps: u32,
        gap_fraction: f64,
    },
    /// Three notched disks at the corners of an equilateral triangle; the
    /// mask is the illusory triangle.
    Kanizsa { side: f64, inducer_radius: f64 },
    /// Evenly spaced row of dots; consecutive pairs joined by a bar share a
    /// label.
    Connection {
        pairs: u32,
        radius: f64,
        spacing: f64,
        line_width: f64,
    },
    /// A straight and a wavy stroke crossing each other; each stroke is a
    /// group and crossings are ignored.
    Continuity {
        amplitude: f64,
        wavelength: f64,
        thickness: f64,
    },
    /// Identical dots in a row; the first `enclosed` sit inside a drawn
    /// rectangle and form group 0, the rest group 1.
    Enclosure {
        dots: u32,
        enclosed: u32,
        radius: f64,
        spacing: f64,
        border: f64,
        padding: f64,
    },
    /// Two dot lattices; within-group spacing is smaller than the gap
    /// between groups.
    Proximity {
        rows: u32,
        cols: u32,
        radius: f64,
        spacing: f64,
        group_gap: f64,
    },
    /// Dot lattice whose columns alternate between two colors; label is the
    /// color.
    Similarity {
        rows: u32,
        cols: u32,
        radius: f64,
        spacing: f64,
    },
}

impl GestaltParams {
    pub fn principle(&self) -> Principle {
        match self {
            GestaltParams::Closure { .. } => Principle::Closure,
            GestaltParams::Kanizsa { .. } => Principle::Kanizsa,
            GestaltParams::Connection { .. } => Principle::Connection,
            GestaltParams::Continuity { .. } => Principle::Continuity,
            GestaltParams::Enclosure { .. } => Principle::Enclosure,
            GestaltParams::Proximity { .. } => Principle::Proximity,
            GestaltParams::Similarity { .. } => Principle::Similarity,
        }
    }

    /// Parameters scaled to a `width x height` canvas.
    pub fn default_for(principle: Principle, width: u32, height: u32) -> Self {
        let (w, h) = (width as f64, height as f64);
        let m = w.min(h);
        let dot = (m / 32.0).max(1.5);
        match principle {
            Principle::Closure => GestaltParams::Closure {
                radius: 0.3 * m,
                thickness: (0.04 * m).max(1.5),
                gaps: 4,
                gap_fraction: 0.25,
            },
            Principle::Kanizsa => GestaltParams::Kanizsa {
                side: 0.6 * m,
                inducer_radius: 0.12 * m,
            },
            Principle::Connection => {
                let radius = (m / 24.0).max(1.5);
                GestaltParams::Connection {
                    pairs: 3,
                    radius,
                    spacing: (0.8 * w - 2.0 * radius) / 5.0,
                    line_width: (0.6 * radius).max(1.0),
                }
            }
            Principle::Continuity => GestaltParams::Continuity {
                amplitude: 0.25 * h,
                wavelength: 0.5 * w,
                thickness: (0.03 * m).max(1.5),
            },
            Principle::Enclosure => GestaltParams::Enclosure {
                dots: 5,
                enclosed: 2,
                radius: dot,
                spacing: 5.0 * dot,
                border: (0.5 * dot).max(1.0),
                padding: dot,
            },
            Principle::Proximity => GestaltParams::Proximity {
                rows: 3,
                cols: 3,
                radius: dot,
                spacing: 3.0 * dot,
                group_gap: 9.0 * dot,
            },
            Principle::Similarity => GestaltParams::Similarity {
                rows: 4,
                cols: 6,
                radius: dot,
                spacing: 4.0 * dot,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestaltSpec {
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub params: GestaltParams,
}

impl GestaltSpec {
    /// Default geometry for `principle` on a `width x height` canvas.
    pub fn new(principle: Principle, width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            params: GestaltParams::default_for(principle, width, height),
        }
    }
}

/// Analytic region tested at pixel centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum Shape {
    Disk {
        cx: f64,
        cy: f64,
        r: f64,
    },
    /// Segment thickened by `half_width` on every side.
    Capsule {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        half_width: f64,
    },
    /// Border of width `width` inside the rectangle `[x0, x1] x [y0, y1]`.
    RectOutline {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        width: f64,
    },
    /// Annulus with `gaps` evenly spaced angular openings covering
    /// `gap_fraction` of the circumference.
    GappedRing {
        cx: f64,
        cy: f64,
        inner: f64,
        outer: f64,
        gaps: u32,
        gap_fraction: f64,
        rotation: f64,
    },
    Triangle {
        vertices: [[f64; 2]; 3],
    },
    /// Disk with a triangle cut out.
    NotchedDisk {
        cx: f64,
        cy: f64,
        r: f64,
        notch: [[f64; 2]; 3],
    },
    /// Points within `half_thickness` (vertically) of
    /// `y = center_y + amplitude * sin(2 pi x / wavelength + phase)`.
    SineBand {
        center_y: f64,
        amplitude: f64,
        wavelength: f64,
        phase: f64,
        half_thickness: f64,
    },
}

fn in_triangle(v: &[[f64; 2]; 3], x: f64, y: f64) -> bool {
    let edge = |a: [f64; 2], b: [f64; 2]| (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    let (d0, d1, d2) = (edge(v[0], v[1]), edge(v[1], v[2]), edge(v[2], v[0]));
    let has_neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
    let has_pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
    !(has_neg && has_pos)
}

impl Shape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Capsule {
                x0,
                y0,
                x1,
                y1,
                half_width,
            } => {
                let (dx, dy) = (x1 - x0, y1 - y0);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (((x - x0) * dx + (y - y0) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (px, py) = (x0 + t * dx, y0 + t * dy);
                (x - px).powi(2) + (y - py).powi(2) <= half_width * half_width
            }
            Shape::RectOutline { x0, y0, x1, y1, width } => {
                let inside = x >= x0 && x <= x1 && y >= y0 && y <= y1;
                let inner = x > x0 + width && x < x1 - width && y > y0 + width && y < y1 - width;
                inside && !inner
            }
            Shape::GappedRing {
                cx,
                cy,
                inner,
                outer,
                gaps,
                gap_fraction,
                rotation,
            } => {
                let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                if d < inner || d > outer {
                    return false;
                }
                if gaps == 0 || gap_fraction <= 0.0 {
                    return true;
                }
                let period = TAU / gaps as f64;
                let theta = ((y - cy).atan2(x - cx) - rotation).rem_euclid(TAU);
                let phi = theta.rem_euclid(period);
                let to_gap_center = phi.min(period - phi);
                to_gap_center >= 0.5 * gap_fraction * period
            }
            Shape::Triangle { ref vertices } => in_triangle(vertices, x, y),
            Shape::NotchedDisk { cx, cy, r, ref notch } => {
                (x - cx).powi(2) + (y - cy).powi(2) <= r * r && !in_triangle(notch, x, y)
            }
            Shape::SineBand {
                center_y,
                amplitude,
                wavelength,
                phase,
                half_thickness,
            } => {
                let curve = center_y + amplitude * (TAU * x / wavelength + phase).sin();
                (y - curve).abs() <= half_thickness
            }
        }
    }
}

/// One shape of a stimulus: painted with `color`, labeled with `label`,
/// or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestaltElement {
    pub shape: Shape,
    pub color: Option<[f32; 3]>,
    pub label: Option<i32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GestaltStimulus {
    pub image: ProcImage,
    pub mask: LabelMask,
    pub elements: Vec<GestaltElement>,
    /// Mask value of pixels outside every labeled element.
    pub background_label: i32,
}

fn infeasible(msg: String) -> Error {
    Error::InvalidParam(format!("infeasible gestalt geometry: {msg}"))
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("{name} must be positive, got {v}")))
    }
}

struct Palette {
    background: [f32; 3],
    ink: [f32; 3],
    pair: [[f32; 3]; 2],
}

impl Palette {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let gray = |rng: &mut ChaCha8Rng, lo: f32, hi: f32| {
            let v = rng.random_range(lo..hi);
            [v, v, v]
        };
        let background = gray(rng, 0.85, 1.0);
        let ink = gray(rng, 0.0, 0.2);
        let mut a = [rng.random_range(0.0..0.3), rng.random_range(0.0..0.3), rng.random_range(0.0..0.3)];
        a[rng.random_range(0..3)] = rng.random_range(0.7..1.0);
        let b = [1.0 - a[0], 1.0 - a[1], 1.0 - a[2]];
        Self {
            background,
            ink,
            pair: [a, b],
        }
    }
}

/// Random placement of an extent inside the canvas.
fn offset(rng: &mut ChaCha8Rng, slack: f64) -> f64 {
    if slack > 0.0 {
        rng.random_range(0.0..slack)
    } else {
        0.0
    }
}

fn disk(cx: f64, cy: f64, r: f64, color: [f32; 3], label: i32) -> GestaltElement {
    GestaltElement {
        shape: Shape::Disk { cx, cy, r },
        color: Some(color),
        label: Some(label),
    }
}

/// Builds the stimulus and its ground-truth mask. Deterministic in `seed`.
pub fn gen_gestalt(spec: &GestaltSpec, seed: u64) -> Result<GestaltStimulus> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::InvalidParam("gestalt canvas is empty".into()));
    }
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let palette = Palette::draw(&mut rng);
    let mut elements = Vec::new();
    let mut background_label = IGNORE;

    match spec.params {
        GestaltParams::Proximity {
            rows,
            cols,
            radius,
            spacing,
            group_gap,
        } => {
            positive("radius", radius)?;
            if rows == 0 || cols == 0 {
                return Err(Error::InvalidParam("proximity needs at least one dot per group".into()));
            }
            if spacing <= 2.0 * radius {
                return Err(infeasible(format!("spacing {spacing} lets dots of radius {radius} touch")));
            }
            if group_gap <= spacing {
                return Err(infeasible(format!("group gap {group_gap} must exceed spacing {spacing}")));
            }
            let span = |n: u32| (n - 1) as f64 * spacing;
            let total_w = 2.0 * span(cols) + group_gap + 2.0 * radius;
            let total_h = span(rows) + 2.0 * radius;
            if total_w > w || total_h > h {
                return Err(infeasible(format!("layout {total_w}x{total_h} exceeds canvas {w}x{h}")));
            }
            let x0 = offset(&mut rng, w - total_w) + radius;
            let y0 = offset(&mut rng, h - total_h) + radius;
            for group in 0..2 {
                let gx = x0 + group as f64 * (span(cols) + group_gap);
                for r in 0..rows {
                    for c in 0..cols {
                        let (cx, cy) = (gx + c as f64 * spacing, y0 + r as f64 * spacing);
                        elements.push(disk(cx, cy, radius, palette.ink, group));
                    }
                }
            }
        }
        GestaltParams::Similarity {
            rows,
            cols,
            radius,
            spacing,
        } => {
            positive("radius", radius)?;
            if rows == 0 || cols < 2 {
                return Err(Error::InvalidParam("similarity needs at least one row and two columns".into()));
            }
            if spacing <= 2.0 * radius {
                return Err(infeasible(format!("spacing {spacing} lets dots of radius {radius} touch")));
            }
            let total_w = (cols - 1) as f64 * spacing + 2.0 * radius;
            let total_h = (rows - 1) as f64 * spacing + 2.0 * radius;
            if total_w > w || total_h > h {
                return Err(infeasible(format!("layout {total_w}x{total_h} exceeds canvas {w}x{h}")));
            }
            let x0 = offset(&mut rng, w - total_w) + radius;
            let y0 = offset(&mut rng, h - total_h) + radius;
            for r in 0..rows {
                for c in 0..cols {
                    let group = (c % 2) as i32;
                    let (cx, cy) = (x0 + c as f64 * spacing, y0 + r as f64 * spacing);
                    elements.push(disk(cx, cy, radius, palette.pair[group as usize], group));
                }
            }
        }
        GestaltParams::Enclosure {
            dots,
            enclosed,
            radius,
            spacing,
            border,
            padding,
        } => {
            positive("radius", radius)?;
            positive("border", border)?;
            if padding < 0.0 || !padding.is_finite() {
                return Err(Error::InvalidParam(format!("padding {padding} must be >= 0")));
            }
            if enclosed == 0 || enclosed >= dots {
                return Err(Error::InvalidParam(format!(
                    "enclosed count {enclosed} must be in 1..{dots}"
                )));
            }
            let clearance = radius + padding + border;
            if spacing <= radius + clearance {
                return Err(infeasible(format!(
                    "spacing {spacing} leaves no room for the outline between dots"
                )));
            }
            let total_w = clearance + (dots - 1) as f64 * spacing + radius;
            let total_h = 2.0 * clearance;
            if total_w > w || total_h > h {
                return Err(infeasible(format!("layout {total_w}x{total_h} exceeds canvas {w}x{h}")));
            }
            let x0 = offset(&mut rng, w - total_w) + clearance;
            let cy = offset(&mut rng, h - total_h) + clearance;
            let last_inside = x0 + (enclosed - 1) as f64 * spacing;
            elements.push(GestaltElement {
                shape: Shape::RectOutline {
                    x0: x0 - clearance,
                    y0: cy - clearance,
                    x1: last_inside + clearance,
                    y1: cy + clearance,
                    width: border,
                },
                color: Some(palette.ink),
                label: None,
            });
            for i in 0..dots {
                let group = if i < enclosed { 0 } else { 1 };
                elements.push(disk(x0 + i as f64 * spacing, cy, radius, palette.ink, group));
            }
        }
        GestaltParams::Closure {
            radius,
            thickness,
            gaps,
            gap_fraction,
        } => {
            positive("radius", radius)?;
            positive("thickness", thickness)?;
            if thickness >= radius {
                return Err(infeasible(format!("thickness {thickness} must be below radius {radius}")));
            }
            if !(0.0..1.0).contains(&gap_fraction) || (gap_fraction > 0.0 && gaps == 0) {
                return Err(Error::InvalidParam(format!(
                    "gap fraction {gap_fraction} with {gaps} gaps is not a broken ring"
                )));
            }
            let outer = radius + thickness / 2.0;
            if 2.0 * outer > w.min(h) {
                return Err(infeasible(format!("ring of radius {outer} exceeds canvas")));
            }
            let cx = outer + offset(&mut rng, w - 2.0 * outer);
            let cy = outer + offset(&mut rng, h - 2.0 * outer);
            let rotation = rng.random_range(0.0..TAU);
            background_label = 0;
            elements.push(GestaltElement {
                shape: Shape::Disk { cx, cy, r: outer },
                color: None,
                label: Some(1),
            });
            elements.push(GestaltElement {
                shape: Shape::GappedRing {
                    cx,
                    cy,
                    inner: radius - thickness / 2.0,
                    outer,
                    gaps,
                    gap_fraction,
                    rotation,
                },
                color: Some(palette.ink),
                label: None,
            });
        }
        GestaltParams::Kanizsa { side, inducer_radius } => {
            positive("side", side)?;
            positive("inducer radius", inducer_radius)?;
            if inducer_radius >= side / 2.0 {
                return Err(infeasible(format!(
                    "inducers of radius {inducer_radius} overlap on side {side}"
                )));
            }
            let tri_h = side * 3f64.sqrt() / 2.0;
            let (total_w, total_h) = (side + 2.0 * inducer_radius, tri_h + 2.0 * inducer_radius);
            if total_w > w || total_h > h {
                return Err(infeasible(format!("layout {total_w}x{total_h} exceeds canvas {w}x{h}")));
            }
            let left = offset(&mut rng, w - total_w) + inducer_radius;
            let top = offset(&mut rng, h - total_h) + inducer_radius;
            let vertices = [[left + side / 2.0, top], [left + side, top + tri_h], [left, top + tri_h]];
            background_label = 0;
            elements.push(GestaltElement {
                shape: Shape::Triangle { vertices },
                color: None,
                label: Some(1),
            });
            for v in vertices {
                elements.push(GestaltElement {
                    shape: Shape::NotchedDisk {
                        cx: v[0],
                        cy: v[1],
                        r: inducer_radius,
                        notch: vertices,
                    },
                    color: Some(palette.ink),
                    label: None,
                });
            }
        }
        GestaltParams::Connection {
            pairs,
            radius,
            spacing,
            line_width,
        } => {
            positive("radius", radius)?;
            positive("line width", line_width)?;
            if pairs == 0 || pairs > 254 {
                return Err(Error::InvalidParam(format!("pair count {pairs} must be in 1..=254")));
            }
            if spacing <= 2.0 * radius {
                return Err(infeasible(format!("spacing {spacing} lets dots of radius {radius} touch")));
            }
            if line_width > 2.0 * radius {
                return Err(infeasible(format!("line width {line_width} exceeds dot diameter")));
            }
            let total_w = (2 * pairs - 1) as f64 * spacing + 2.0 * radius;
            if total_w > w || 2.0 * radius > h {
                return Err(infeasible(format!("row of width {total_w} exceeds canvas {w}x{h}")));
            }
            let x0 = offset(&mut rng, w - total_w) + radius;
            let cy = offset(&mut rng, h - 2.0 * radius) + radius;
            for p in 0..pairs {
                let xa = x0 + (2 * p) as f64 * spacing;
                let xb = xa + spacing;
                let label = p as i32;
                elements.push(GestaltElement {
                    shape: Shape::Capsule {
                        x0: xa,
                        y0: cy,
                        x1: xb,
                        y1: cy,
                        half_width: line_width / 2.0,
                    },
                    color: Some(palette.ink),
                    label: Some(label),
                });
                elements.push(disk(xa, cy, radius, palette.ink, label));
                elements.push(disk(xb, cy, radius, palette.ink, label));
            }
        }
        GestaltParams::Continuity {
            amplitude,
            wavelength,
            thickness,
        } => {
            positive("amplitude", amplitude)?;
            positive("wavelength", wavelength)?;
            positive("thickness", thickness)?;
            if amplitude <= thickness {
                return Err(infeasible(format!(
                    "amplitude {amplitude} must exceed stroke thickness {thickness}"
                )));
            }
            let total_h = 2.0 * amplitude + thickness;
            if total_h > h {
                return Err(infeasible(format!("curves of height {total_h} exceed canvas height {h}")));
            }
            let center_y = thickness / 2.0 + amplitude + offset(&mut rng, h - total_h);
            let phase = rng.random_range(0.0..TAU);
            let half_thickness = thickness / 2.0;
            elements.push(GestaltElement {
                shape: Shape::Capsule {
                    x0: 0.0,
                    y0: center_y,
                    x1: w,
                    y1: center_y,
                    half_width: half_thickness,
                },
                color: Some(palette.ink),
                label: Some(0),
            });
            elements.push(GestaltElement {
                shape: Shape::SineBand {
                    center_y,
                    amplitude,
                    wavelength,
                    phase,
                    half_thickness,
                },
                color: Some(palette.pair[0]),
                label: Some(1),
            });
        }
    }

    render(spec, seed, palette.background, elements, background_label)
}

fn render(
    spec: &GestaltSpec,
    seed: u64,
    background: [f32; 3],
    elements: Vec<GestaltElement>,
    background_label: i32,
) -> Result<GestaltStimulus> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let mut data = Vec::with_capacity(w * h * 3);
    let mut labels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut color = background;
            let mut label: Option<i32> = None;
            let mut conflict = false;
            for e in &elements {
                if !e.shape.contains(px, py) {
                    continue;
                }
                if let Some(c) = e.color {
                    color = c;
                }
                if let Some(l) = e.label {
                    match label {
                        Some(prev) if prev != l => conflict = true,
                        _ => label = Some(l),
                    }
                }
            }
            data.extend_from_slice(&color);
            labels.push(if conflict { IGNORE } else { label.unwrap_or(background_label) });
        }
    }
    let provenance = Provenance {
        pipeline: "gestalt".into(),
        seed: Some(seed),
        params: json!({ "spec": spec, "elements": &elements }),
    };
    Ok(GestaltStimulus {
        image: ProcImage::new(spec.width, spec.height, data, provenance)?,
        mask: LabelMask::new(h, w, labels)?,
        elements,
        background_label,
    })
}
