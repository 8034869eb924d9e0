//! Finite-difference checks of analytic model Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::model::{check_finite, DdeModel};

/// A point at which the model derivatives are checked.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub x: DVector<f64>,
    pub z: DVector<f64>,
    pub u: DVector<f64>,
    pub d: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub block: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport {
    pub blocks: Vec<BlockError>,
    pub tol: f64,
}

impl JacobianReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error <= self.tol)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| !(b.max_rel_error <= self.tol))
            .map(|b| b.block.as_str())
            .collect()
    }

    pub fn worst(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

/// Central-difference Jacobian of `f` at `w`, step `1e-6 max(1, |w_j|)`.
///
/// The step actually taken, `((w+h) - (w-h)) / 2`, is used in the quotient.
pub fn central_difference<F>(w: &DVector<f64>, mut f: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let f0 = f(w)?;
    let mut jac = DMatrix::zeros(f0.len(), w.len());
    let mut wp = w.clone();
    for j in 0..w.len() {
        let h = 1e-6 * w[j].abs().max(1.0);
        let (plus, minus) = (w[j] + h, w[j] - h);
        wp[j] = plus;
        let fp = f(&wp)?;
        wp[j] = minus;
        let fm = f(&wp)?;
        wp[j] = w[j];
        let step = plus - minus;
        jac.column_mut(j).copy_from(&((fp - fm) / step));
    }
    Ok(jac)
}

/// Largest entrywise relative deviation of `analytic` from `reference`.
///
/// Entries small relative to the block are measured against `1e-3` of the
/// block's largest reference entry.
pub fn relative_error(analytic: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let scale = reference.amax();
    let floor = (1e-3 * scale).max(1e-8);
    analytic
        .iter()
        .zip(reference.iter())
        .map(|(a, r)| {
            let e = (a - r).abs() / r.abs().max(floor);
            if e.is_nan() {
                f64::INFINITY
            } else {
                e
            }
        })
        .fold(0.0, f64::max)
}

/// Compares every analytic Jacobian of `model` against central differences.
pub fn validate_jacobians(model: &dyn DdeModel, points: &[SamplePoint], tol: f64) -> Result<JacobianReport> {
    let m = model.n_delays();
    let mut worst = vec![0.0_f64; 3 + 2 * m];
    for p in points {
        let f0 = model.rhs(&p.x, &p.z, &p.u, &p.d)?;
        check_finite("rhs", &f0, &[&p.x, &p.z, &p.u, &p.d])?;
        let jac = model.rhs_jacobians(&p.x, &p.z, &p.u, &p.d)?;

        let fd_x = central_difference(&p.x, |x| model.rhs(x, &p.z, &p.u, &p.d))?;
        let fd_z = central_difference(&p.z, |z| model.rhs(&p.x, z, &p.u, &p.d))?;
        let fd_u = central_difference(&p.u, |u| model.rhs(&p.x, &p.z, u, &p.d))?;
        for (k, (a, r)) in [(&jac.dx, &fd_x), (&jac.dz, &fd_z), (&jac.du, &fd_u)].into_iter().enumerate() {
            check_finite("rhs jacobian", &DVector::from_column_slice(a.as_slice()), &[&p.x, &p.z, &p.u, &p.d])?;
            worst[k] = worst[k].max(relative_error(a, r));
        }

        for i in 0..m {
            let h_jac = model.delayed_quantity_jacobian(i, &p.x);
            let fd_h = central_difference(&p.x, |x| Ok(model.delayed_quantity(i, x)))?;
            worst[3 + i] = worst[3 + i].max(relative_error(&h_jac, &fd_h));

            let g = model.delay_gradient(i, &p.u)?;
            let tau_jac = DMatrix::from_row_slice(1, g.len(), g.as_slice());
            let fd_tau = central_difference(&p.u, |u| Ok(DVector::from_element(1, model.delay(i, u)?)))?;
            worst[3 + m + i] = worst[3 + m + i].max(relative_error(&tau_jac, &fd_tau));
        }
    }

    let mut names = vec!["df/dx".to_string(), "df/dz".to_string(), "df/du".to_string()];
    names.extend((0..m).map(|i| format!("dh{}/dx", i + 1)));
    names.extend((0..m).map(|i| format!("dtau{}/du", i + 1)));
    Ok(JacobianReport {
        blocks: names
            .into_iter()
            .zip(worst)
            .map(|(block, max_rel_error)| BlockError { block, max_rel_error })
            .collect(),
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testing::LinearDde;
    use crate::model::RhsJacobians;
    use crate::Error;
    use nalgebra::dmatrix;

    fn linear() -> LinearDde {
        LinearDde {
            a: dmatrix![-1.0, 2.0; 0.5, -3.0],
            b: vec![dmatrix![0.25, 0.0; -1.0, 4.0]],
            e: DMatrix::zeros(2, 0),
            taus: vec![1.0],
        }
    }

    fn origin() -> SamplePoint {
        SamplePoint {
            x: DVector::zeros(2),
            z: DVector::zeros(2),
            u: DVector::zeros(0),
            d: DVector::zeros(0),
        }
    }

    #[test]
    fn linear_model_is_exact() {
        let report = validate_jacobians(&linear(), &[origin()], 1e-12).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.worst() <= 1e-12);
    }

    struct Corrupted(LinearDde);

    impl DdeModel for Corrupted {
        fn n_states(&self) -> usize { self.0.n_states() }
        fn n_inputs(&self) -> usize { self.0.n_inputs() }
        fn delayed_dims(&self) -> Vec<usize> { self.0.delayed_dims() }
        fn delay(&self, i: usize, u: &DVector<f64>) -> Result<f64> { self.0.delay(i, u) }
        fn delay_gradient(&self, i: usize, u: &DVector<f64>) -> Result<DVector<f64>> { self.0.delay_gradient(i, u) }
        fn delayed_quantity(&self, i: usize, x: &DVector<f64>) -> DVector<f64> { self.0.delayed_quantity(i, x) }
        fn delayed_quantity_jacobian(&self, i: usize, x: &DVector<f64>) -> DMatrix<f64> { self.0.delayed_quantity_jacobian(i, x) }
        fn rhs(&self, x: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
            self.0.rhs(x, z, u, d)
        }
        fn rhs_jacobians(&self, x: &DVector<f64>, z: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> Result<RhsJacobians> {
            let mut j = self.0.rhs_jacobians(x, z, u, d)?;
            j.dx[(1, 0)] += 1.0;
            Ok(j)
        }
    }

    #[test]
    fn injected_fault_is_reported() {
        let report = validate_jacobians(&Corrupted(linear()), &[origin()], 1e-6).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failing(), vec!["df/dx"]);
    }

    struct Blowup;

    impl DdeModel for Blowup {
        fn n_states(&self) -> usize { 1 }
        fn n_inputs(&self) -> usize { 0 }
        fn delayed_dims(&self) -> Vec<usize> { vec![] }
        fn delay(&self, _i: usize, _u: &DVector<f64>) -> Result<f64> { unreachable!() }
        fn delay_gradient(&self, _i: usize, _u: &DVector<f64>) -> Result<DVector<f64>> { unreachable!() }
        fn delayed_quantity(&self, _i: usize, _x: &DVector<f64>) -> DVector<f64> { unreachable!() }
        fn delayed_quantity_jacobian(&self, _i: usize, _x: &DVector<f64>) -> DMatrix<f64> { unreachable!() }
        fn rhs(&self, x: &DVector<f64>, _z: &DVector<f64>, _u: &DVector<f64>, _d: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(x.map(|v| 1.0 / v))
        }
        fn rhs_jacobians(&self, x: &DVector<f64>, _z: &DVector<f64>, _u: &DVector<f64>, _d: &DVector<f64>) -> Result<RhsJacobians> {
            Ok(RhsJacobians { dx: DMatrix::from_element(1, 1, -1.0 / (x[0] * x[0])), dz: DMatrix::zeros(1, 0), du: DMatrix::zeros(1, 0) })
        }
    }

    #[test]
    fn non_finite_output_echoes_point() {
        let p = SamplePoint { x: DVector::zeros(1), z: DVector::zeros(0), u: DVector::zeros(0), d: DVector::zeros(0) };
        match validate_jacobians(&Blowup, &[p], 1e-6).unwrap_err() {
            Error::Evaluation { point, .. } => assert_eq!(point, vec![0.0]),
            other => panic!("unexpected {other:?}"),
        }
    }
}
