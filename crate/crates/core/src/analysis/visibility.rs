use crate::error::{Error, Result};

/// `(c_max - c_min) / (c_max + c_min - 2A)` with `A` accidentals per window.
pub fn visibility_corrected(c_max: f64, c_min: f64, accidentals: f64) -> Result<f64> {
    if !(c_max >= c_min) || !(c_min >= 0.0) || !(accidentals >= 0.0) {
        return Err(Error::arg(format!(
            "need c_max >= c_min >= 0 and A >= 0, got {c_max}, {c_min}, {accidentals}"
        )));
    }
    let den = c_max + c_min - 2.0 * accidentals;
    if !(den > 0.0) {
        return Err(Error::Undefined(format!(
            "visibility denominator {den} is not positive"
        )));
    }
    Ok((c_max - c_min) / den)
}

pub fn raw_visibility(c_max: f64, c_min: f64) -> Result<f64> {
    visibility_corrected(c_max, c_min, 0.0)
}
