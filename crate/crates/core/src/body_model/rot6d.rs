//! 6D rotation parameterization.
//!
//! The first two columns of a rotation matrix, flattened to six numbers,
//! are mapped back to a full matrix by Gram-Schmidt: normalize the first
//! vector, orthogonalize and normalize the second, complete with a cross
//! product. Continuous everywhere except the measure-zero degenerate set
//! (near-zero or near-parallel inputs), which is rejected rather than
//! silently clamped.

use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, V};

/// 6D encoding of the identity rotation.
pub const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

const DEGENERATE_EPS: f64 = 1e-8;

/// Decode six parameters to a rotation matrix (row-major `[[f64;3];3]`,
/// decoded vectors become the matrix columns).
pub fn rot6d_to_rotmat(r: &[f64; 6]) -> Result<[[f64; 3]; 3]> {
    let a = [r[0], r[1], r[2]];
    let b = [r[3], r[4], r[5]];
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    if na < DEGENERATE_EPS {
        return Err(Error::Degenerate(format!(
            "first rotation vector has norm {na:.3e}"
        )));
    }
    let b1 = [a[0] / na, a[1] / na, a[2] / na];
    let d = b1[0] * b[0] + b1[1] * b[1] + b1[2] * b[2];
    let u = [b[0] - d * b1[0], b[1] - d * b1[1], b[2] - d * b1[2]];
    let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    if nu < DEGENERATE_EPS {
        return Err(Error::Degenerate(format!(
            "rotation vectors are near-parallel (residual norm {nu:.3e})"
        )));
    }
    let b2 = [u[0] / nu, u[1] / nu, u[2] / nu];
    let b3 = [
        b1[1] * b2[2] - b1[2] * b2[1],
        b1[2] * b2[0] - b1[0] * b2[2],
        b1[0] * b2[1] - b1[1] * b2[0],
    ];
    Ok([
        [b1[0], b2[0], b3[0]],
        [b1[1], b2[1], b3[1]],
        [b1[2], b2[2], b3[2]],
    ])
}

/// First two columns of a rotation matrix as a 6D encoding. Exact inverse of
/// [`rot6d_to_rotmat`] for orthonormal input.
pub fn rotmat_to_rot6d(m: &[[f64; 3]; 3]) -> [f64; 6] {
    [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]
}

/// Tape version of [`rot6d_to_rotmat`]: input is a length-6 node, output a
/// `[3,3]` node. Degeneracy is detected on the forward values.
pub fn rot6d_to_rotmat_var(tape: &mut Tape, r: V) -> Result<V> {
    assert!(tape.value(r).len() == 6, "rot6d input must have 6 elements");
    let a = tape.slice(r, 0, 3);
    let b = tape.slice(r, 3, 3);

    let na = tape.norm(a);
    if tape.item(na) < DEGENERATE_EPS {
        return Err(Error::Degenerate(format!(
            "first rotation vector has norm {:.3e}",
            tape.item(na)
        )));
    }
    let inv_na = tape.recip(na);
    let b1 = tape.scalar_mul(inv_na, a);

    let d = tape.dot(b1, b);
    let proj = tape.scalar_mul(d, b1);
    let u = tape.sub(b, proj);
    let nu = tape.norm(u);
    if tape.item(nu) < DEGENERATE_EPS {
        return Err(Error::Degenerate(format!(
            "rotation vectors are near-parallel (residual norm {:.3e})",
            tape.item(nu)
        )));
    }
    let inv_nu = tape.recip(nu);
    let b2 = tape.scalar_mul(inv_nu, u);
    let b3 = tape.cross3(b1, b2);

    // Assemble rows from column vectors.
    let mut rows = Vec::with_capacity(9);
    for i in 0..3 {
        rows.push(tape.slice(b1, i, 1));
        rows.push(tape.slice(b2, i, 1));
        rows.push(tape.slice(b3, i, 1));
    }
    let flat = tape.concat(&rows);
    Ok(tape.reshape(flat, &[3, 3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;
    use proptest::prelude::*;

    fn assert_orthonormal(m: &[[f64; 3]; 3], tol: f64) {
        // R^T R = I.
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < tol, "R^T R [{i}][{j}] = {dot}");
            }
        }
        // det = +1.
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        assert!((det - 1.0).abs() < tol, "det = {det}");
    }

    #[test]
    fn identity_encoding_decodes_to_identity() {
        let m = rot6d_to_rotmat(&IDENTITY_6D).unwrap();
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn ninety_degree_z_rotation_decodes_exactly() {
        // Columns (0,1,0) and (-1,0,0): rotation by 90 degrees about z.
        let m = rot6d_to_rotmat(&[0.0, 1.0, 0.0, -1.0, 0.0, 0.0]).unwrap();
        let expected = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[i][j] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert!(rot6d_to_rotmat(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).is_err());
        assert!(rot6d_to_rotmat(&[1e-9, 0.0, 0.0, 0.0, 1.0, 0.0]).is_err());
        // Parallel vectors.
        assert!(rot6d_to_rotmat(&[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn roundtrip_from_rotation_matrix_is_exact() {
        let m = rot6d_to_rotmat(&[0.3, 0.8, -0.1, -0.5, 0.4, 0.9]).unwrap();
        let r6 = rotmat_to_rot6d(&m);
        let m2 = rot6d_to_rotmat(&r6).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[i][j] - m2[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tape_version_matches_plain_version() {
        let r = [0.3, 0.8, -0.1, -0.5, 0.4, 0.9];
        let plain = rot6d_to_rotmat(&r).unwrap();
        let mut tape = Tape::new();
        let rv = tape.leaf(Tensor::vector(r.to_vec()));
        let mv = rot6d_to_rotmat_var(&mut tape, rv).unwrap();
        let data = tape.value(mv).data();
        for i in 0..3 {
            for j in 0..3 {
                assert!((plain[i][j] - data[i * 3 + j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tape_version_rejects_degenerate_values() {
        let mut tape = Tape::new();
        let rv = tape.leaf(Tensor::vector(vec![1.0, 0.0, 0.0, 1.0, 1e-10, 0.0]));
        assert!(rot6d_to_rotmat_var(&mut tape, rv).is_err());
    }

    proptest! {
        #[test]
        fn random_inputs_decode_to_orthonormal_matrices(
            v in proptest::collection::vec(-2.0f64..2.0, 6)
        ) {
            let r = [v[0], v[1], v[2], v[3], v[4], v[5]];
            if let Ok(m) = rot6d_to_rotmat(&r) {
                assert_orthonormal(&m, 1e-10);
            }
        }
    }
}
