use proptest::prelude::*;

use levy_pme::elliptic::{solve_linear_resolvent, solve_nonlinear_elliptic};
use levy_pme::grid::{cell_average, lp_norm};
use levy_pme::levy::{discretize_local, discretize_nonlocal, NonlocalMeasure, PointMass};
use levy_pme::nonlinearity::solve_scalar;
use levy_pme::operator::pairing;
use levy_pme::stepper::split_measure;
use levy_pme::{DiscreteMeasure, Grid, GridFunction, Nonlinearity, Split, StencilOperator};

fn measure_strategy(dim: usize, h: f64) -> impl Strategy<Value = DiscreteMeasure> {
    let offset = prop::collection::vec(-4i64..=4, dim).prop_filter("nonzero", |b| b.iter().any(|&v| v != 0));
    prop::collection::vec((offset, 0.05f64..3.0), 1..6).prop_map(move |entries| {
        let mut nu = DiscreteMeasure::empty(dim, h);
        for (b, w) in entries {
            nu.add_symmetric(&b, w).unwrap();
        }
        nu
    })
}

fn problem(dim: usize) -> impl Strategy<Value = (StencilOperator, Vec<f64>, Vec<f64>)> {
    let cells = if dim == 1 { 3usize..24 } else { 3usize..8 };
    cells.prop_flat_map(move |m| {
        let n = m.pow(dim as u32);
        let h = 1.0 / m as f64;
        (measure_strategy(dim, h), prop::collection::vec(-2.0f64..2.0, n), prop::collection::vec(-2.0f64..2.0, n))
            .prop_map(move |(nu, a, b)| {
                let grid = Grid::new(dim, m, h).unwrap();
                (StencilOperator::new(nu, grid).unwrap(), a, b)
            })
    })
}

fn nonlinearity() -> impl Strategy<Value = Nonlinearity> {
    prop_oneof![
        Just(Nonlinearity::Identity),
        (0.3f64..4.0).prop_map(|m| Nonlinearity::power(m).unwrap()),
        (0.0f64..1.0).prop_map(|l| Nonlinearity::stefan(l).unwrap()),
        (0.0f64..1.0, 0.0f64..2.0).prop_map(|(a, b)| {
            Nonlinearity::piecewise_linear(&[(-1.0, -a), (0.0, 0.0), (0.5, 0.0), (1.5, b)]).unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operator_is_self_adjoint_and_null_sum((op, a, b) in prop_oneof![problem(1), problem(2)]) {
        let grid = *op.grid();
        let phi = GridFunction::new(grid, a).unwrap();
        let psi = GridFunction::new(grid, b).unwrap();
        let lphi = op.apply(&phi).unwrap();
        let lpsi = op.apply(&psi).unwrap();
        let left = pairing(&phi, &lpsi).unwrap();
        let right = pairing(&lphi, &psi).unwrap();
        let scale = op.lambda() * phi.lp_norm(2.0) * psi.lp_norm(2.0) + 1.0;
        prop_assert!((left - right).abs() <= 1e-12 * scale);
        prop_assert!(lphi.mass().abs() <= 1e-12 * (op.lambda() * phi.lp_norm(1.0) + 1.0));
        // energy identity E[phi, psi] = -(phi, L psi)
        let e = op.energy_form(&phi, &psi).unwrap();
        prop_assert!((e + left).abs() <= 1e-11 * scale);
        prop_assert!(op.energy_form(&phi, &phi).unwrap() >= -1e-12 * scale);
    }

    #[test]
    fn stencil_and_spectral_application_agree((op, a, _b) in prop_oneof![problem(1), problem(2)]) {
        let u = GridFunction::new(*op.grid(), a).unwrap();
        let direct = op.apply(&u).unwrap();
        let spectral = op.apply_spectral(&u).unwrap();
        let scale = op.lambda() * u.max_abs() + 1.0;
        for (x, y) in direct.values().iter().zip(spectral.values()) {
            prop_assert!((x - y).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn scalar_solve_is_monotone_and_nonexpansive(
        nl in nonlinearity(),
        c in 0.0f64..20.0,
        r in -3.0f64..3.0,
        dr in 0.0f64..1.0,
    ) {
        let a = solve_scalar(c, r, &nl, 1e-14);
        let b = solve_scalar(c, r + dr, &nl, 1e-14);
        prop_assert!((a + c * nl.eval(a) - r).abs() <= 1e-12);
        prop_assert!(b >= a - 1e-13);
        prop_assert!(b - a <= dr + 1e-12);
    }

    #[test]
    fn elliptic_solution_map_is_an_ordered_l1_contraction(
        (op, a, b) in prop_oneof![problem(1), problem(2)],
        nl in nonlinearity(),
        k in 0.01f64..0.5,
    ) {
        let grid = *op.grid();
        let k = k / op.lambda().max(1.0);
        let f = GridFunction::new(grid, a).unwrap();
        let g = GridFunction::new(grid, b).unwrap();
        let tol = 1e-11;
        let (w, rw) = solve_nonlinear_elliptic(&op, k, &nl, &f, tol).unwrap();
        let (v, rv) = solve_nonlinear_elliptic(&op, k, &nl, &g, tol).unwrap();
        prop_assert!(rw.converged && rv.converged);
        let slack = tol * grid.len() as f64;
        let lhs = w.zip_map(&v, |x, y| (x - y).max(0.0)).unwrap().mass();
        let rhs = f.zip_map(&g, |x, y| (x - y).max(0.0)).unwrap().mass();
        prop_assert!(lhs <= rhs + slack, "{lhs} > {rhs}");
        prop_assert!(w.max_abs() <= f.max_abs() + tol);
        // ordered data give ordered solutions
        let upper = f.zip_map(&g, f64::max).unwrap();
        let (u, ru) = solve_nonlinear_elliptic(&op, k, &nl, &upper, tol).unwrap();
        prop_assert!(ru.converged);
        for (x, y) in w.values().iter().zip(u.values()) {
            prop_assert!(*x <= *y + tol);
        }
    }

    #[test]
    fn resolvent_estimates((op, a, b) in prop_oneof![problem(1), problem(2)], eps in 0.05f64..5.0) {
        let grid = *op.grid();
        let g1 = GridFunction::new(grid, a).unwrap();
        let g2 = GridFunction::new(grid, b).unwrap();
        let (v1, r1) = solve_linear_resolvent(eps, &op, &g1, 1e-12).unwrap();
        let (v2, r2) = solve_linear_resolvent(eps, &op, &g2, 1e-12).unwrap();
        prop_assert!(r1.converged && r2.converged);
        prop_assert!(eps * v1.lp_norm(1.0) <= g1.lp_norm(1.0) + 1e-10);
        prop_assert!(eps * v1.max_abs() <= g1.max_abs() + 1e-10);
        let x = pairing(&v1, &g2).unwrap();
        let y = pairing(&g1, &v2).unwrap();
        prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
    }

    #[test]
    fn split_preserves_the_measure(nu in measure_strategy(2, 0.25), r in 0.0f64..2.0) {
        for split in [Split::FullyImplicit, Split::FullyExplicit, Split::Radius(r)] {
            let (a, b) = split_measure(&nu, split);
            prop_assert_eq!(a.sum(&b).unwrap(), nu.clone());
            prop_assert!(a.is_symmetric() && b.is_symmetric());
        }
    }

    #[test]
    fn holder_between_norms(values in prop::collection::vec(-5.0f64..5.0, 2..40)) {
        let grid = Grid::with_period(1, values.len(), 1.0).unwrap();
        let u = GridFunction::new(grid, values).unwrap();
        // unit volume: ||u||_1 <= ||u||_2 <= ||u||_inf
        prop_assert!(lp_norm(&u, 1.0) <= lp_norm(&u, 2.0) * (1.0 + 1e-12));
        prop_assert!(lp_norm(&u, 2.0) <= lp_norm(&u, f64::INFINITY) * (1.0 + 1e-12));
    }

    #[test]
    fn cell_average_is_monotone(shift in 0.0f64..1.0, m in 2usize..30) {
        let grid = Grid::with_period(1, m, 1.0).unwrap();
        let lo = cell_average(|x| (6.0 * x[0]).sin(), &grid).unwrap();
        let hi = cell_average(|x| (6.0 * x[0]).sin() + shift, &grid).unwrap();
        for (a, b) in lo.values().iter().zip(hi.values()) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn local_stencil_mass(
        cols in prop::collection::vec(prop::collection::vec(-3i64..=3, 2), 0..4),
        h in 0.01f64..1.0,
    ) {
        let cols: Vec<Vec<i64>> = cols.into_iter().filter(|c| c.iter().any(|&v| v != 0)).collect();
        let nu = discretize_local(2, &cols, h).unwrap();
        let expected = 2.0 * cols.len() as f64 / (h * h);
        prop_assert!((nu.total_mass() - expected).abs() <= 1e-12 * expected.max(1.0));
        prop_assert!(nu.is_symmetric());
    }

    #[test]
    fn point_mass_discretization_is_symmetric(
        locs in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 2), 0.0f64..2.0), 1..5),
        h in 0.1f64..0.5,
    ) {
        let mut masses = Vec::new();
        for (z, w) in locs {
            let mirror: Vec<f64> = z.iter().map(|v| -v).collect();
            masses.push(PointMass::new(z, w));
            masses.push(PointMass::new(mirror, w));
        }
        let d = discretize_nonlocal(&NonlocalMeasure::point_masses(2, masses), h, 10.0).unwrap();
        prop_assert!(d.measure.is_symmetric());
        prop_assert!(d.measure.iter().all(|(_, w)| w >= 0.0));
    }
}

#[test]
fn fractional_discretization_is_symmetric_in_every_dimension() {
    for dim in 1..=3 {
        let h = 0.25;
        let d = discretize_nonlocal(&NonlocalMeasure::fractional_laplacian(dim, 0.8), h, 0.6).unwrap();
        assert!(d.measure.is_symmetric());
        assert!(d.measure.iter().all(|(_, w)| w > 0.0));
        assert!(d.tail_mass > 0.0);
    }
}
