use std::sync::Arc;

use bgk::csv_io::{parse_diagnostics, to_csv_string};
use bgk::diagnostics::{entropy_split, relative_entropy, DiagnosticsRecord};
use bgk::fields::{
    compute_moments, conserved_from_primitive, discrete_maxwellian, eval_maxwellian,
    primitive_from_conserved, GridFunction, PhaseSpace,
};
use bgk::grid::{e5, SpatialGrid, VelocityGrid};
use bgk::linearization::project;
use bgk::snapshot::Snapshot;
use bgk::solver::{step_relax, step_transport};
use proptest::prelude::*;

fn space(cells: usize, nodes: usize, v_max: f64) -> Arc<PhaseSpace> {
    PhaseSpace::new(
        SpatialGrid::new(1, cells).unwrap(),
        VelocityGrid::new(nodes, v_max).unwrap(),
    )
    .unwrap()
}

fn state() -> impl Strategy<Value = (f64, [f64; 3], f64)> {
    (0.5..2.0f64, prop::array::uniform3(-0.6..0.6f64), 0.5..2.0f64)
}

/// Maxwellian times a bounded smooth factor, one state per cell.
fn distribution(cells: usize) -> impl Strategy<Value = Vec<((f64, [f64; 3], f64), [f64; 5])>> {
    prop::collection::vec((state(), prop::array::uniform5(-1.0..1.0f64)), cells)
}

fn build(s: &Arc<PhaseSpace>, cells: &[((f64, [f64; 3], f64), [f64; 5])]) -> GridFunction {
    let mut f = GridFunction::zeros(s);
    let nodes = s.velocity().nodes();
    for (i, ((rho, u, t), c)) in cells.iter().enumerate() {
        for (slot, &v) in f.cell_mut(i).iter_mut().zip(nodes) {
            let arg = c[0] + 0.5 * (c[1] * v[0] + c[2] * v[1] + c[3] * v[2]) + 0.2 * c[4] * e5(v);
            *slot = eval_maxwellian(*rho, *u, *t, v) * (1.0 + 0.5 * arg.tanh());
        }
    }
    f
}

fn moments(values: &[f64], s: &PhaseSpace) -> [f64; 5] {
    let mut acc = [0.0; 5];
    for (&x, b) in values.iter().zip(s.basis().values()) {
        for k in 0..5 {
            acc[k] += x * b[k];
        }
    }
    acc.map(|a| a * s.velocity().weight())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn velocity_nodes_mirror_exactly(half in 2usize..16, v_max in 0.5..12.0f64) {
        let g = VelocityGrid::new(2 * half, v_max).unwrap();
        for (i, v) in g.nodes().iter().enumerate() {
            let m = g.nodes()[g.mirror(i)];
            prop_assert!((0..3).all(|k| m[k].to_bits() == (-v[k]).to_bits()));
        }
        // one rounding per accumulated term at most
        let total: f64 = g.nodes().iter().map(|_| g.weight()).sum();
        let exact = (2.0 * v_max).powi(3);
        prop_assert!((total - exact).abs() <= g.len() as f64 * f64::EPSILON * exact);
    }

    #[test]
    fn conserved_primitive_round_trip(
        rho in 1e-3..1e3f64,
        u in prop::array::uniform3(-5.0..5.0f64),
        t in 1e-2..1e2f64,
    ) {
        let (rho_u, g) = conserved_from_primitive(rho, u, t);
        let (rho2, u2, t2) = primitive_from_conserved(rho, rho_u, g).unwrap();
        prop_assert!((rho2 - rho).abs() <= 1e-12 * rho);
        prop_assert!((t2 - t).abs() <= 1e-12 * t, "T {t} -> {t2}");
        for k in 0..3 {
            prop_assert!((u2[k] - u[k]).abs() <= 1e-12 * (1.0 + u[k].abs()));
        }
    }

    #[test]
    fn discrete_maxwellian_cancels_moments_and_is_positive(cells in distribution(2)) {
        let s = space(2, 16, 8.0);
        let f = build(&s, &cells);
        let fields = compute_moments(&f).unwrap();
        let (m, _) = discrete_maxwellian(&fields, &s).unwrap();
        prop_assert!(m.values().iter().all(|&x| x > 0.0));
        for cell in 0..2 {
            let d: Vec<f64> = m.cell(cell).iter().zip(f.cell(cell)).map(|(a, b)| a - b).collect();
            let rho = fields.cells[cell].rho;
            for x in moments(&d, &s) {
                prop_assert!(x.abs() <= 1e-12 * rho.max(1.0), "{x:e}");
            }
        }
        // moment consistency
        let back = compute_moments(&m).unwrap();
        for (a, b) in back.cells.iter().zip(&fields.cells) {
            for (x, y) in a.conserved().iter().zip(b.conserved()) {
                prop_assert!((x - y).abs() <= 1e-12 * b.rho.max(1.0));
            }
        }
    }

    #[test]
    fn projection_is_idempotent(cells in distribution(2)) {
        // idempotent up to the lattice's error in the fourth moment of mu,
        // which is about 1e-12 at 24 nodes and v_max = 8. White noise would
        // amplify that by the large coefficients from the box corners.
        let s = space(2, 24, 8.0);
        let f = build(&s, &cells);
        let pf = project(&f);
        prop_assert!(project(&pf).sub(&pf).max_abs() <= 1e-10 * f.max_abs());
    }

    #[test]
    fn relaxation_preserves_cell_moments(
        cells in distribution(2),
        dt in 1e-3..5.0f64,
        ab in prop::sample::select(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (1.0, 0.5)]),
    ) {
        let s = space(2, 16, 8.0);
        let f = build(&s, &cells);
        let g = step_relax(&f, dt, ab.0, ab.1).unwrap();
        for cell in 0..2 {
            let a = moments(f.cell(cell), &s);
            let b = moments(g.cell(cell), &s);
            for k in 0..5 {
                prop_assert!((a[k] - b[k]).abs() <= 1e-12 * a[0].max(1.0));
            }
        }
        // the relative entropy cannot grow under pure relaxation
        prop_assert!(relative_entropy(&g).unwrap() <= relative_entropy(&f).unwrap() + 1e-12);
    }

    #[test]
    fn transport_conserves_totals(cells in distribution(8), dt in 0.0..0.5f64) {
        let s = space(8, 8, 4.0);
        let f = build(&s, &cells);
        let g = step_transport(&f, dt);
        let total = |h: &GridFunction| {
            let mut acc = [0.0; 5];
            for cell in 0..8 {
                let m = moments(h.cell(cell), &s);
                for k in 0..5 {
                    acc[k] += m[k];
                }
            }
            acc
        };
        let (a, b) = (total(&f), total(&g));
        for k in 0..5 {
            prop_assert!((a[k] - b[k]).abs() <= 1e-12 * a[0]);
        }
    }

    #[test]
    fn entropy_split_is_non_negative(cells in distribution(2)) {
        let s = space(2, 8, 6.0);
        let f = build(&s, &cells).sub(&GridFunction::global_maxwellian(&s));
        prop_assert!(entropy_split(&f) >= 0.0);
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact(
        values in prop::collection::vec(any::<f64>(), 2 * 64),
        time in any::<f64>(),
        step in any::<u64>(),
    ) {
        let snap = Snapshot {
            dims: 1,
            cells_per_axis: 2,
            nodes_per_axis: 4,
            v_max: 3.0,
            time,
            step_count: step,
            values,
        };
        let bytes = snap.encode();
        let back = Snapshot::decode(&bytes).unwrap();
        prop_assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn csv_round_trip_is_bit_exact(rows in prop::collection::vec(prop::array::uniform12(-1e300..1e300f64), 0..8)) {
        let records: Vec<DiagnosticsRecord> = rows.iter().map(DiagnosticsRecord::from_row).collect();
        let back = parse_diagnostics(&to_csv_string(&records)).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in records.iter().zip(&back) {
            for (x, y) in a.to_row().iter().zip(b.to_row()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
