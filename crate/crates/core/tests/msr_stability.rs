use ddenoc::model::memory_at;
use ddenoc::msr::{MsrModel, MsrParams, RHO_TH, T_HX, T_R};
use ddenoc::stability::{
    char_fn_approx, char_fn_dde, find_roots_approx, find_roots_dde, linearize_at_steady_state, ScanWindow,
    SteadyLinearization,
};
use ddenoc::DdeModel;
use nalgebra::{dvector, DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;

fn reference_point() -> (MsrModel, SteadyLinearization) {
    let model = MsrModel::new(MsrParams::default()).unwrap();
    let x = model.steady_state(4.0, 50.0, 1.0).unwrap().to_vector();
    let lin = linearize_at_steady_state(&model, &x, &dvector![50.0, 4.0], &DVector::zeros(0), 1e-8).unwrap();
    (model, lin)
}

#[test]
fn delayed_channel_matches_finite_differences() {
    let (model, lin) = reference_point();
    let x = &lin.x_s;
    let z = memory_at(&model, x);
    let d = DVector::zeros(0);
    let dims = model.delayed_dims();
    let mut offset = 0;
    for (i, &dim) in dims.iter().enumerate() {
        // perturb x only where it enters through r_i
        let mut fd = DMatrix::zeros(10, 10);
        for j in 0..10 {
            let h = 1e-6 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp.rows_mut(offset, dim).copy_from(&model.delayed_quantity(i, &xp));
            zm.rows_mut(offset, dim).copy_from(&model.delayed_quantity(i, &xm));
            let fp = model.rhs(x, &zp, &lin.u_s, &d).unwrap();
            let fm = model.rhs(x, &zm, &lin.u_s, &d).unwrap();
            fd.column_mut(j).copy_from(&((fp - fm) / (2.0 * h)));
        }
        let scale = lin.b[i].amax().max(1.0);
        assert!((&fd - &lin.b[i]).amax() <= 1e-8 * scale, "B_{}", i + 1);
        offset += dim;
    }
    // rho_th inherits the T_r row through the substituted thermal feedback
    for r in 0..10 {
        if ![RHO_TH, T_R, T_HX].contains(&r) {
            assert!(lin.b[1].row(r).iter().all(|&v| v == 0.0), "B_2 row {r}");
        }
    }
    assert!(lin.b[1].row(T_R).amax() > 0.0 && lin.b[1].row(T_HX).amax() > 0.0);
}

#[test]
fn approximate_roots_reproduce_reported_values() {
    let (_, lin) = reference_point();
    let roots = find_roots_approx(&lin).unwrap();
    assert_eq!(roots.roots.len(), 10);
    for target in [-2.33, -4.80, -20.2_f64] {
        assert!(
            roots.roots.iter().any(|r| r.value.im == 0.0 && ((r.value.re - target) / target).abs() <= 0.03),
            "{target} missing from {:?}",
            roots.values()
        );
    }
    assert!(roots.max_real_part() > 0.0);
    // conjugate closure
    for r in &roots.roots {
        assert!(roots.roots.iter().any(|s| (s.value - r.value.conj()).norm() <= 1e-9 * (1.0 + r.value.norm())));
    }
}

#[test]
fn delay_roots_are_stable_and_match_near_origin() {
    let (_, lin) = reference_point();
    let dde = find_roots_dde(&lin, ScanWindow::default(), (600, 600)).unwrap();
    assert!(!dde.roots.is_empty());
    for r in &dde.roots {
        assert!(r.value.re <= 0.0 || r.value.norm() <= 1e-9, "unstable root {}", r.value);
        assert!(r.residual <= 1e-8);
    }
    let approx = find_roots_approx(&lin).unwrap().values();
    let mut near = dde.with_conjugates();
    near.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    for lam in near.iter().take(4) {
        let best = approx.iter().map(|m| (m - lam).norm()).fold(f64::INFINITY, f64::min);
        assert!(best / lam.norm().max(1e-9) <= 0.2, "{lam}: distance {best}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn substitution_identity(re in -30.0..5.0_f64, im in -15.0..15.0_f64) {
        let (_, lin) = reference_point();
        let lambda = Complex64::new(re, im);
        let a = lin.char_det_approx(lambda);
        // independent route: det(lambda M - K) from the pencil, dense complex LU
        let (k, m) = ddenoc::stability::approx_pencil(&lin);
        let pencil = m.map(|v| Complex64::new(v, 0.0)) * lambda - k.map(|v| Complex64::new(v, 0.0));
        let oracle = pencil.determinant();
        let scale = a.log_scale.exp();
        prop_assert!((a.value() - oracle).norm() <= 1e-10 * scale);
        prop_assert!((char_fn_approx(&lin, lambda) - oracle).norm() <= 1e-10 * scale);
    }

    #[test]
    fn characteristic_function_is_conjugate_symmetric(re in -30.0..5.0_f64, im in -15.0..15.0_f64) {
        let (_, lin) = reference_point();
        let lambda = Complex64::new(re, im);
        // compared in log form: the determinant overflows deep in the left half plane
        let a = lin.char_det_dde(lambda.conj());
        let b = lin.char_det_dde(lambda);
        prop_assert!((a.log_abs - b.log_abs).abs() <= 1e-10 * (1.0 + b.log_abs.abs()));
        prop_assert!((a.phase - b.phase.conj()).norm() <= 1e-9);
        if b.log_abs < 600.0 {
            let (x, y) = (char_fn_dde(&lin, lambda.conj()), char_fn_dde(&lin, lambda).conj());
            prop_assert!((x - y).norm() <= 1e-10 * b.log_scale.exp());
        }
    }
}
