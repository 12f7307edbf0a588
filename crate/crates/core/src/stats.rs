//! Summary statistics for proportion-valued results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sided 5% critical value of the standard normal.
pub const Z_CRITICAL_5PCT: f64 = 1.96;

fn check_proportion(p: f64, n: u64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParam(format!("proportion {p} outside [0, 1]")));
    }
    if n == 0 {
        return Err(Error::InvalidParam("sample count must be positive".into()));
    }
    Ok(())
}

/// Standard error of a sample proportion, `sqrt(p (1 - p) / n)`.
pub fn proportion_se(p: f64, n: u64) -> Result<f64> {
    check_proportion(p, n)?;
    Ok((p * (1.0 - p) / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    pub significant_at_5pct: bool,
}

/// Pooled-variance two-proportion z-test.
pub fn two_proportion_ztest(p1: f64, n1: u64, p2: f64, n2: u64) -> Result<ZTest> {
    check_proportion(p1, n1)?;
    check_proportion(p2, n2)?;
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let pooled = (p1 * n1f + p2 * n2f) / (n1f + n2f);
    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f)).sqrt();
    let diff = p1 - p2;
    let z = if diff == 0.0 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY.copysign(diff)
    } else {
        diff / se
    };
    Ok(ZTest {
        z,
        significant_at_5pct: z.abs() > Z_CRITICAL_5PCT,
    })
}
