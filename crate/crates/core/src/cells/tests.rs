use super::*;
use crate::gradcheck::{grad_check, DEFAULT_EPS};

fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| 2.0 * rng.next_uniform() - 1.0).collect()).unwrap()
}

fn spec(name: &str, i: usize, h: usize) -> CellSpec {
    CellSpec::new(CellKind::from_name(name).unwrap(), i, h).unwrap()
}

fn step_values(
    cell: &Cell<f64>,
    x: &Tensor<f64>,
    state: &CellState<Tensor<f64>>,
) -> (Tensor<f64>, CellState<Tensor<f64>>) {
    let tape = Tape::new();
    let bound = cell.bind(&tape).unwrap();
    let xv = tape.constant(x.clone()).unwrap();
    let sv = state.try_map(|t| tape.constant(t.clone())).unwrap();
    let (out, next) = cell.step(&tape, &bound, xv, &sv, &mut Mode::Eval).unwrap();
    (tape.value(out).unwrap(), next.try_map(|&v| tape.value(v)).unwrap())
}

#[test]
fn registry_has_thirteen_unique_cells() {
    let kinds = CellKind::all();
    assert_eq!(kinds.len(), 13);
    let mut names: Vec<_> = kinds.iter().map(|k| k.name()).collect();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), 13);
    for k in &kinds {
        assert_eq!(CellKind::from_name(k.name()).unwrap(), *k);
    }
    assert!(CellKind::from_name("transformer").is_err());
}

#[test]
fn every_family_is_represented() {
    let families: Vec<_> = CellKind::all().iter().map(|k| k.family()).collect();
    for f in [Family::Gated, Family::PhysicsInspired, Family::AlternativeIntegration] {
        assert!(families.contains(&f), "{f:?}");
    }
}

#[test]
fn lstm_manifest_shapes() {
    let m = spec("lstm", 3, 5).manifest();
    assert_eq!(m.len(), 12);
    let names: Vec<_> = m.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(
        names,
        ["W_i", "W_f", "W_g", "W_o", "U_i", "U_f", "U_g", "U_o", "b_i", "b_f", "b_g", "b_o"]
    );
    for p in &m[0..4] {
        assert_eq!(p.shape, vec![5, 3]);
    }
    for p in &m[4..8] {
        assert_eq!(p.shape, vec![5, 5]);
    }
    for p in &m[8..12] {
        assert_eq!(p.shape, vec![5]);
    }
}

#[test]
fn indrnn_manifest() {
    let m = spec("indrnn", 2, 3).manifest();
    assert_eq!(
        m,
        vec![
            ParamSpec { name: "W".into(), shape: vec![3, 2], init: InitSpec::UniformFan },
            ParamSpec { name: "u".into(), shape: vec![3], init: InitSpec::Uniform { low: 0.0, high: 1.0 } },
            ParamSpec { name: "b".into(), shape: vec![3], init: InitSpec::Zeros },
        ]
    );
}

#[test]
fn elman_and_mlstm_manifests() {
    assert_eq!(spec("elman", 1, 1).manifest().len(), 3);
    let lstm = spec("lstm", 3, 4).manifest();
    let mlstm = spec("mlstm", 3, 4).manifest();
    assert_eq!(&mlstm[..12], &lstm[..]);
    let extra: Vec<_> = mlstm[12..].iter().map(|p| (p.name.as_str(), p.shape.clone())).collect();
    assert_eq!(extra, [("W_mx", vec![4, 3]), ("W_mh", vec![4, 4])]);
}

#[test]
fn fast_scalars_start_at_stated_values() {
    let mut rng = Rng::new(0);
    let c = Cell::<f64>::new(spec("fastrnn", 2, 2), &mut rng).unwrap();
    assert_eq!(c.params().get("alpha").unwrap().data(), &[-3.0]);
    assert_eq!(c.params().get("beta").unwrap().data(), &[3.0]);
    let c = Cell::<f64>::new(spec("fastgrnn", 2, 2), &mut rng).unwrap();
    assert_eq!(c.params().get("zeta").unwrap().data(), &[1.0]);
    assert_eq!(c.params().get("nu").unwrap().data(), &[-4.0]);
}

#[test]
fn creation_is_deterministic() {
    for kind in CellKind::all() {
        let s = CellSpec::new(kind, 3, 4).unwrap();
        let a = Cell::<f64>::new(s, &mut Rng::new(99)).unwrap();
        let b = Cell::<f64>::new(s, &mut Rng::new(99)).unwrap();
        for (x, y) in a.params().tensors().iter().zip(b.params().tensors()) {
            let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x), bits(y), "{}", kind.name());
        }
    }
}

#[test]
fn uniform_fan_uses_hidden_size() {
    let c = Cell::<f64>::new(spec("elman", 100, 4), &mut Rng::new(1)).unwrap();
    let w = c.params().get("W").unwrap();
    // H = 4 gives a bound of 0.5; fan-in 100 would give 0.1.
    assert!(w.max_abs() < 0.5);
    assert!(w.max_abs() > 0.1);
}

#[test]
fn invalid_hyperparameters_rejected() {
    let bad = [
        CellKind::CoRnn { dt: -0.1, gamma: 1.0, epsilon: 1.0 },
        CellKind::CoRnn { dt: 0.1, gamma: -1.0, epsilon: 1.0 },
        CellKind::CoRnn { dt: 0.1, gamma: 1.0, epsilon: -1.0 },
        CellKind::Lem { dt_max: 0.0 },
        CellKind::AntisymmetricRnn { eps_step: 0.0, gamma: 0.0 },
        CellKind::AntisymmetricRnn { eps_step: 0.1, gamma: -0.5 },
    ];
    for kind in bad {
        assert!(matches!(CellSpec::new(kind, 2, 2), Err(Error::Contract(_))), "{kind:?}");
    }
    assert!(CellSpec::new(CellKind::Lstm, 0, 2).is_err());
}

#[test]
fn zero_states() {
    let z = spec("lstm", 4, 3).zero_state::<f64>(2).unwrap();
    let CellState::Double(h, c) = &z else { panic!("{z:?}") };
    assert_eq!(h, &Tensor::zeros(&[2, 3]).unwrap());
    assert_eq!(c, &Tensor::zeros(&[2, 3]).unwrap());

    let z = spec("cornn", 4, 3).zero_state::<f64>(1).unwrap();
    let CellState::Custom(parts) = &z else { panic!("{z:?}") };
    assert_eq!(parts.iter().map(|p| p.0).collect::<Vec<_>>(), ["y", "z"]);
    assert!(parts.iter().all(|p| p.1.max_abs() == 0.0));

    let z = spec("elman", 4, 3).zero_state::<f64>(1).unwrap();
    assert!(matches!(z, CellState::Single(ref h) if h.max_abs() == 0.0));
}

#[test]
fn zero_lstm_stays_zero() {
    let mut c = Cell::<f64>::new(spec("lstm", 3, 4), &mut Rng::new(0)).unwrap();
    c.zero_params();
    let x = rand_tensor(&[2, 3], &mut Rng::new(1));
    let (out, next) = step_values(&c, &x, &c.zero_state(2).unwrap());
    assert_eq!(out.max_abs(), 0.0);
    for p in next.parts() {
        assert_eq!(p.max_abs(), 0.0);
    }
}

#[test]
fn zero_gru_halves_state() {
    let mut c = Cell::<f64>::new(spec("gru", 3, 4), &mut Rng::new(0)).unwrap();
    c.zero_params();
    let mut rng = Rng::new(2);
    let v = rand_tensor(&[2, 4], &mut rng);
    let (out, _) = step_values(&c, &rand_tensor(&[2, 3], &mut rng), &CellState::Single(v.clone()));
    assert_eq!(out, v.map(|a| 0.5 * a));
}

#[test]
fn antisymmetric_symmetric_w_is_fixpoint() {
    let kind = CellKind::AntisymmetricRnn { eps_step: 0.3, gamma: 0.0 };
    let s = CellSpec::new(kind, 2, 3).unwrap();
    let mut c = Cell::<f64>::new(s, &mut Rng::new(0)).unwrap();
    c.zero_params();
    let w = Tensor::matrix(3, 3, vec![1., 2., 3., 2., 5., 6., 3., 6., 9.]).unwrap();
    *c.params_mut().get_mut("W").unwrap() = w;
    let mut rng = Rng::new(3);
    let h = rand_tensor(&[2, 3], &mut rng);
    let (out, _) = step_values(&c, &rand_tensor(&[2, 2], &mut rng), &CellState::Single(h.clone()));
    assert_eq!(out, h);
}

#[test]
fn cornn_zero_dt_is_fixpoint() {
    let kind = CellKind::CoRnn { dt: 0.0, gamma: 1.0, epsilon: 1.0 };
    let c = Cell::<f64>::new(CellSpec::new(kind, 3, 4).unwrap(), &mut Rng::new(0)).unwrap();
    let mut rng = Rng::new(4);
    let state = CellState::Custom(vec![
        ("y", rand_tensor(&[2, 4], &mut rng)),
        ("z", rand_tensor(&[2, 4], &mut rng)),
    ]);
    let (out, next) = step_values(&c, &rand_tensor(&[2, 3], &mut rng), &state);
    assert_eq!(next, state);
    assert_eq!(&out, state.primary());
}

#[test]
fn saturated_fastrnn_matches_elman() {
    let mut rng = Rng::new(5);
    let elman = Cell::<f64>::new(spec("elman", 3, 4), &mut rng).unwrap();
    let named = ["W", "U", "b"]
        .iter()
        .map(|n| (n.to_string(), elman.params().get(n).unwrap().clone()))
        .chain([
            ("alpha".to_string(), Tensor::vector(vec![20.0])),
            ("beta".to_string(), Tensor::vector(vec![-20.0])),
        ])
        .collect();
    let fs = spec("fastrnn", 3, 4);
    let fast = Cell::from_params(fs, CellParams::from_tensors(&fs, named).unwrap()).unwrap();
    let x = rand_tensor(&[2, 3], &mut rng);
    let h = CellState::Single(rand_tensor(&[2, 4], &mut rng));
    let (a, _) = step_values(&elman, &x, &h);
    let (b, _) = step_values(&fast, &x, &h);
    assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
}

#[test]
fn output_aliases_primary_state() {
    for kind in CellKind::all() {
        let c = Cell::<f64>::new(CellSpec::new(kind, 3, 4).unwrap(), &mut Rng::new(6)).unwrap();
        let tape = Tape::new();
        let bound = c.bind(&tape).unwrap();
        let x = tape.constant(rand_tensor(&[2, 3], &mut Rng::new(7))).unwrap();
        let s = c.zero_state(2).unwrap().try_map(|t| tape.constant(t.clone())).unwrap();
        let (out, next) = c.step(&tape, &bound, x, &s, &mut Mode::Eval).unwrap();
        assert_eq!(&out, next.primary(), "{}", kind.name());
    }
}

fn random_state(c: &Cell<f64>, batch: usize, rng: &mut Rng) -> CellState<Tensor<f64>> {
    c.zero_state(batch).unwrap().map(|t| rand_tensor(t.shape(), rng))
}

/// Gradient check of `sum(h') + sum(other state parts)` with respect to every
/// parameter, the input and the incoming state.
fn cell_gradcheck(kind: CellKind, seed: u64) -> f64 {
    let (i, h, b) = (4, 4, 2);
    let s = CellSpec::new(kind, i, h).unwrap();
    let mut rng = Rng::new(seed);
    let c = Cell::<f64>::new(s, &mut rng).unwrap();
    let x = rand_tensor(&[b, i], &mut rng);
    let state = random_state(&c, b, &mut rng);
    let n_params = c.params().len();
    let mut inputs: Vec<Tensor<f64>> = c.params().tensors().to_vec();
    inputs.push(x);
    inputs.extend(state.parts().into_iter().cloned());
    let template = state.clone();
    let report = grad_check(
        |tape, vars| {
            let leaves = vars[..n_params].to_vec();
            let work = prepare(&s, tape, &leaves)?;
            let bound = Bound { leaves, work };
            let mut parts = vars[n_params + 1..].iter();
            let st = template.map(|_| *parts.next().unwrap());
            let (out, next) = cell_forward(&s, tape, &bound, vars[n_params], &st)?;
            let mut loss = tape.sum(out)?;
            for p in next.parts().into_iter().skip(1) {
                loss = tape.add(loss, tape.sum(*p)?)?;
            }
            Ok(loss)
        },
        &inputs,
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(report.checked > 0);
    report.max_rel_error
}

#[test]
fn gradcheck_every_cell() {
    for kind in CellKind::all() {
        let err = cell_gradcheck(kind, 31);
        assert!(err < 1e-5, "{}: {err:e}", kind.name());
    }
}

#[test]
fn gradcheck_tanh_variants_of_relu_cells() {
    for kind in [
        CellKind::Elman { activation: Activation::Relu },
        CellKind::IndRnn { activation: Activation::Tanh },
    ] {
        let err = cell_gradcheck(kind, 32);
        assert!(err < 1e-5, "{kind:?}: {err:e}");
    }
}

#[test]
fn batch_rows_are_independent() {
    for kind in CellKind::all() {
        let c = Cell::<f64>::new(CellSpec::new(kind, 3, 4).unwrap(), &mut Rng::new(8)).unwrap();
        let mut rng = Rng::new(9);
        let x = rand_tensor(&[2, 3], &mut rng);
        let state = random_state(&c, 2, &mut rng);
        let (out, _) = step_values(&c, &x, &state);
        for row in 0..2 {
            let take = |t: &Tensor<f64>| {
                let w = t.shape()[1];
                Tensor::matrix(1, w, t.data()[row * w..(row + 1) * w].to_vec()).unwrap()
            };
            let (o, _) = step_values(&c, &take(&x), &state.map(take));
            assert!(o.max_abs_diff(&take(&out)).unwrap() < 1e-12, "{}", kind.name());
        }
    }
}

#[test]
fn convex_cells_stay_bounded() {
    for name in ["gru", "mgu", "lem", "fastgrnn"] {
        let c = Cell::<f64>::new(spec(name, 3, 6), &mut Rng::new(10)).unwrap();
        let mut rng = Rng::new(11);
        for _ in 0..20 {
            let x = rand_tensor(&[4, 3], &mut rng).map(|v| 5.0 * v);
            let state = random_state(&c, 4, &mut rng).map(|t| t.map(|v| 3.0 * v));
            let (out, _) = step_values(&c, &x, &state);
            let prev = state.primary().max_abs();
            let cap = if name == "fastgrnn" {
                let g = |n: &str| crate::autodiff::sigmoid(c.params().get(n).unwrap().data()[0]);
                g("zeta") + g("nu")
            } else {
                1.0
            };
            assert!(out.max_abs() <= prev.max(cap), "{name}: {} > {}", out.max_abs(), prev.max(cap));
        }
    }
}

#[test]
fn antisymmetric_effective_matrix_is_exact() {
    let mut rng = Rng::new(12);
    for hidden in [1, 3, 8] {
        let w = rand_tensor(&[hidden, hidden], &mut rng);
        let gamma = 0.37;
        let a = effective_matrix(&w, gamma).unwrap();
        let at = a.transpose().unwrap();
        for r in 0..hidden {
            for c in 0..hidden {
                let sum = a.data()[r * hidden + c] + at.data()[r * hidden + c];
                let target = if r == c { -2.0 * gamma } else { 0.0 };
                assert_eq!(sum, target, "({r},{c})");
            }
        }
    }
}

#[test]
fn lstm_parameter_count_at_128() {
    let s = spec("lstm", 128, 128);
    assert_eq!(s.parameter_count(), 131_584);
    assert_eq!(s.parameter_count_formula(), "4HI + 4H² + 4H");
}

#[test]
fn shape_errors_name_cell_and_part() {
    let c = Cell::<f64>::new(spec("gru", 3, 4), &mut Rng::new(0)).unwrap();
    let tape = Tape::new();
    let bound = c.bind(&tape).unwrap();
    let x = tape.constant(Tensor::zeros(&[2, 3]).unwrap()).unwrap();
    let h = tape.constant(Tensor::zeros(&[3, 4]).unwrap()).unwrap();
    match c.step(&tape, &bound, x, &CellState::Single(h), &mut Mode::Eval) {
        Err(Error::Dimension { op, .. }) => assert!(op.contains("gru") && op.contains("h"), "{op}"),
        other => panic!("{other:?}"),
    }
    let wrong_layout = CellState::Double(h, h);
    assert!(c.step(&tape, &bound, x, &wrong_layout, &mut Mode::Eval).is_err());
}

#[test]
fn conformance_suite_passes_for_all_cells() {
    for kind in CellKind::all() {
        let c = Cell::<f64>::new(CellSpec::new(kind, 3, 5).unwrap(), &mut Rng::new(13)).unwrap();
        conformance::check_recurrent(&c, 14).unwrap();
    }
}

#[test]
fn f32_cells_run() {
    for kind in CellKind::all() {
        let c = Cell::<f32>::new(CellSpec::new(kind, 3, 4).unwrap(), &mut Rng::new(15)).unwrap();
        let tape = Tape::<f32>::new();
        let bound = c.bind(&tape).unwrap();
        let x = tape.constant(Tensor::full(&[2, 3], 0.5f32).unwrap()).unwrap();
        let s = c.zero_state(2).unwrap().try_map(|t| tape.constant(t.clone())).unwrap();
        let (out, _) = c.step(&tape, &bound, x, &s, &mut Mode::Eval).unwrap();
        assert!(tape.value(out).unwrap().is_finite());
    }
}
