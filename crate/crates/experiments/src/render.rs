//! 8-bit grayscale PGM renders with a sidecar holding the scaling bounds.

use std::path::{Path, PathBuf};

use rbc_core::ScalarField;

use crate::ExperimentError;

pub fn bounds_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".bounds");
    PathBuf::from(name)
}

/// Binary PGM (P5) bytes, min-max scaled. The top image row is the top
/// wall. A constant field maps to all zeros.
pub fn pgm_bytes(field: &ScalarField<f64>) -> (Vec<u8>, f64, f64) {
    let (ny, nx) = field.grid().shape();
    let v = field.values();
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for j in (0..ny).rev() {
        for i in 0..nx {
            let px = if span > 0.0 { ((v[[j, i]] - lo) / span * 255.0).round() } else { 0.0 };
            out.push(px.clamp(0.0, 255.0) as u8);
        }
    }
    (out, lo, hi)
}

pub fn render_field(field: &ScalarField<f64>, path: &Path) -> Result<(), ExperimentError> {
    let (bytes, lo, hi) = pgm_bytes(field);
    std::fs::write(path, bytes)?;
    std::fs::write(bounds_path(path), format!("min {lo:e}\nmax {hi:e}\n"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rbc_core::Grid;

    #[test]
    fn endpoints_map_to_0_and_255() {
        let g = Grid::new(4, 2).unwrap();
        let f = ScalarField::from_flat(g, vec![-1.0, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let (bytes, lo, hi) = pgm_bytes(&f);
        assert_eq!((lo, hi), (-1.0, 1.0));
        let pixels = &bytes[bytes.len() - 8..];
        // Bottom row (j = 0) is printed last.
        assert_eq!(&pixels[4..], &[0, 128, 191, 255]);
    }

    #[test]
    fn constant_field_is_black() {
        let f = ScalarField::constant(Grid::new(4, 2).unwrap(), 4.2);
        let (bytes, _, _) = pgm_bytes(&f);
        assert!(bytes.ends_with(&[0; 8]));
    }
}
