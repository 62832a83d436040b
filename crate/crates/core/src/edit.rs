//! Object-level edits driven by a grounded 3D mask.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::scene::{Mask3D, Scene};

#[derive(Clone, Debug, PartialEq)]
pub enum EditCommand {
    Remove,
    /// `color ← clamp(matrix · color + offset)`
    Recolor {
        matrix: Matrix3<f64>,
        offset: Vector3<f64>,
    },
}

impl EditCommand {
    /// Parses 12 floats: a row-major 3×3 matrix followed by the offset.
    pub fn recolor_from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != 12 {
            return Err(Error::input(format!(
                "recolor takes 12 values (matrix + offset), got {}",
                values.len()
            )));
        }
        Ok(EditCommand::Recolor {
            matrix: Matrix3::from_row_slice(&values[..9]),
            offset: Vector3::from_row_slice(&values[9..]),
        })
    }

    pub fn apply(&self, scene: &Scene, mask: &Mask3D) -> Result<Scene> {
        match self {
            EditCommand::Remove => remove_object(scene, mask),
            EditCommand::Recolor { matrix, offset } => recolor_object(scene, mask, matrix, offset),
        }
    }
}

fn check(scene: &Scene, mask: &Mask3D) -> Result<Vec<bool>> {
    if mask.len() != scene.len() {
        return Err(Error::dim(format!(
            "mask has {} entries for {} gaussians",
            mask.len(),
            scene.len()
        )));
    }
    Ok(mask.hard())
}

/// Deletes the masked Gaussians. An empty mask is a no-op.
pub fn remove_object(scene: &Scene, mask: &Mask3D) -> Result<Scene> {
    let hard = check(scene, mask)?;
    if !hard.contains(&true) {
        log::warn!("remove: mask selects no gaussians; scene unchanged");
        return Ok(scene.clone());
    }
    let keep: Vec<bool> = hard.iter().map(|&h| !h).collect();
    Ok(scene.filtered(&keep))
}

/// Applies an affine color map to the masked Gaussians, leaving everything
/// else untouched.
pub fn recolor_object(
    scene: &Scene,
    mask: &Mask3D,
    matrix: &Matrix3<f64>,
    offset: &Vector3<f64>,
) -> Result<Scene> {
    let hard = check(scene, mask)?;
    if matrix.iter().chain(offset.iter()).any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite recolor parameters"));
    }
    let mut out = scene.clone();
    for (g, _) in out.gaussians.iter_mut().zip(&hard).filter(|(_, &h)| h) {
        g.color = (matrix * g.color + offset).map(|v| v.clamp(0.0, 1.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian;

    fn scene() -> Scene {
        let g = |c: f64| {
            Gaussian::new([c; 3], [0.1; 3], [1.0, 0.0, 0.0, 0.0], 0.8, [0.2, 0.4, 0.6], vec![c])
                .unwrap()
        };
        Scene::new(vec![g(0.0), g(1.0), g(2.0)], vec![]).unwrap()
    }

    #[test]
    fn identity_recolor_is_bitwise_noop() {
        let s = scene();
        let m = Mask3D::from_hard(&[true, false, true]);
        let out = recolor_object(&s, &m, &Matrix3::identity(), &Vector3::zeros()).unwrap();
        assert_eq!(out.gaussians, s.gaussians);
    }

    #[test]
    fn constant_map_paints_red() {
        let s = scene();
        let m = Mask3D::from_hard(&[false, true, false]);
        let out = recolor_object(&s, &m, &Matrix3::zeros(), &Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(out.gaussians[1].color, Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(out.gaussians[0], s.gaussians[0]);
        assert_eq!(out.gaussians[2], s.gaussians[2]);
    }

    #[test]
    fn recolor_clamps() {
        let s = scene();
        let m = Mask3D::from_hard(&[true, true, true]);
        let out = recolor_object(&s, &m, &(Matrix3::identity() * 4.0), &Vector3::new(0.0, -3.0, 0.0)).unwrap();
        assert_eq!(out.gaussians[0].color, Vector3::new(0.8, 0.0, 1.0));
    }

    #[test]
    fn remove_is_idempotent() {
        let s = scene();
        let m = Mask3D::from_hard(&[false, true, false]);
        let once = remove_object(&s, &m).unwrap();
        assert_eq!(once.len(), 2);
        // same hard selection expressed on the edited scene selects nothing
        let again = remove_object(&once, &Mask3D::from_hard(&[false, false])).unwrap();
        assert_eq!(again.gaussians, once.gaussians);
    }

    #[test]
    fn parses_twelve_floats() {
        let v: Vec<f64> = (0..12).map(f64::from).collect();
        match EditCommand::recolor_from_slice(&v).unwrap() {
            EditCommand::Recolor { matrix, offset } => {
                assert_eq!(matrix[(0, 1)], 1.0);
                assert_eq!(matrix[(1, 0)], 3.0);
                assert_eq!(offset, Vector3::new(9.0, 10.0, 11.0));
            }
            _ => unreachable!(),
        }
        assert!(EditCommand::recolor_from_slice(&v[..11]).is_err());
    }
}
