mod common;

use common::reference;
use proptest::prelude::*;
use recurrent::cells::{conformance, prepare, Bound, Mode};
use recurrent::gradcheck::{grad_check, DEFAULT_EPS};
use recurrent::layers::{
    bidirectional_scan, scan, scan_batch, stack_steps, wrap, Direction, Dropout, LayerSpec,
    SequenceBatch, StackedRnn, Wrapper,
};
use recurrent::{Cell, CellKind, CellSpec, CellState, Recurrent, Rng, Tape, Tensor};

fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| 2.0 * rng.next_uniform() - 1.0).collect()).unwrap()
}

fn cell(kind: CellKind, i: usize, h: usize, seed: u64) -> Cell<f64> {
    Cell::new(CellSpec::new(kind, i, h).unwrap(), &mut Rng::new(seed)).unwrap()
}

fn max_diff_to_reference(out: &Tensor<f64>, reference: &[Vec<Vec<f64>>]) -> f64 {
    let flat: Vec<f64> = reference.iter().flatten().flatten().copied().collect();
    out.data()
        .iter()
        .zip(&flat)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn run_scan(
    c: &Cell<f64>,
    batch: &SequenceBatch<f64>,
    state0: &CellState<Tensor<f64>>,
) -> (Tensor<f64>, CellState<Tensor<f64>>) {
    let tape = Tape::new();
    let bound = c.bind(&tape).unwrap();
    let out = scan_batch(c, &tape, &bound, batch, Some(state0), &mut Mode::Eval).unwrap();
    let state = out.state.try_map(|&v| tape.value(v)).unwrap();
    (stack_steps(&tape, &out.outputs).unwrap(), state)
}

#[test]
fn scan_matches_reference_loop_for_every_cell() {
    let (t, b, i, h) = (16, 4, 5, 8);
    for kind in CellKind::all() {
        let c = cell(kind, i, h, 1);
        let mut rng = Rng::new(2);
        let data = rand_tensor(&[t, b, i], &mut rng);
        let state0 = c.zero_state(b).unwrap().map(|s| rand_tensor(s.shape(), &mut rng));
        let batch = SequenceBatch::new(data.clone(), None).unwrap();
        let (out, state) = run_scan(&c, &batch, &state0);
        let (ref_out, ref_state) = reference::scan(&c, &data, None, &state0);
        let d = max_diff_to_reference(&out, &ref_out);
        assert!(d < 1e-12, "{}: {d:e}", kind.name());
        for (row, parts) in reference::rows_of(&state).iter().zip(&ref_state) {
            for (a, r) in row.iter().zip(parts) {
                for (x, y) in a.iter().zip(r) {
                    assert!((x - y).abs() < 1e-12, "{}", kind.name());
                }
            }
        }
    }
}

#[test]
fn masked_scan_matches_reference_for_every_cell() {
    let lengths = [7, 3, 1, 7];
    for kind in CellKind::all() {
        let c = cell(kind, 3, 4, 3);
        let mut rng = Rng::new(4);
        let data = rand_tensor(&[7, 4, 3], &mut rng);
        let state0 = c.zero_state(4).unwrap().map(|s| rand_tensor(s.shape(), &mut rng));
        let batch = SequenceBatch::new(data.clone(), Some(lengths.to_vec())).unwrap();
        let (out, state) = run_scan(&c, &batch, &state0);
        let (ref_out, ref_state) = reference::scan(&c, &data, Some(&lengths), &state0);
        assert!(max_diff_to_reference(&out, &ref_out) < 1e-12, "{}", kind.name());
        let got = reference::rows_of(&state);
        for (g, r) in got.iter().flatten().flatten().zip(ref_state.iter().flatten().flatten()) {
            assert!((g - r).abs() < 1e-12, "{}", kind.name());
        }
    }
}

#[test]
fn single_step_scan_is_bit_exact() {
    for kind in CellKind::all() {
        let c = cell(kind, 3, 4, 5);
        let mut rng = Rng::new(6);
        let x = rand_tensor(&[1, 2, 3], &mut rng);
        let state0 = c.zero_state(2).unwrap().map(|s| rand_tensor(s.shape(), &mut rng));
        let (out, _) = run_scan(&c, &SequenceBatch::new(x.clone(), None).unwrap(), &state0);

        let tape = Tape::new();
        let bound = c.bind(&tape).unwrap();
        let xv = tape.constant(x.outer(0).unwrap()).unwrap();
        let sv = state0.try_map(|t| tape.constant(t.clone())).unwrap();
        let (o, _) = c.step(&tape, &bound, xv, &sv, &mut Mode::Eval).unwrap();
        assert_eq!(out.outer(0).unwrap(), tape.value(o).unwrap(), "{}", kind.name());
    }
}

#[test]
fn tiny_elman_is_an_affine_recursion() {
    let mut c = cell(CellKind::from_name("elman").unwrap(), 2, 3, 7);
    for t in c.params_mut().tensors_mut() {
        t.scale_in_place(1e-8);
    }
    let mut rng = Rng::new(8);
    let data = rand_tensor(&[6, 1, 2], &mut rng);
    let (out, _) = run_scan(&c, &SequenceBatch::new(data.clone(), None).unwrap(), &c.zero_state(1).unwrap());
    let (w, u, b) = (
        c.params().get("W").unwrap().data().to_vec(),
        c.params().get("U").unwrap().data().to_vec(),
        c.params().get("b").unwrap().data().to_vec(),
    );
    let mut h = [0.0f64; 3];
    for t in 0..6 {
        let x = &data.data()[t * 2..t * 2 + 2];
        let mut next = [0.0; 3];
        for r in 0..3 {
            next[r] = b[r] + w[r * 2] * x[0] + w[r * 2 + 1] * x[1] + (0..3).map(|k| u[r * 3 + k] * h[k]).sum::<f64>();
        }
        h = next;
        for r in 0..3 {
            assert!((out.data()[t * 3 + r] - h[r]).abs() < 1e-12);
        }
    }
}

#[test]
fn ended_sequences_emit_zero_and_hold_state() {
    let c = cell(CellKind::Lstm, 2, 3, 9);
    let mut rng = Rng::new(10);
    let data = rand_tensor(&[4, 1, 2], &mut rng);
    let zero = c.zero_state(1).unwrap();
    let (out, state) = run_scan(&c, &SequenceBatch::new(data.clone(), Some(vec![2])).unwrap(), &zero);
    assert!(out.data()[2 * 3..].iter().all(|&v| v == 0.0));
    let prefix = Tensor::from_vec(&[2, 1, 2], data.data()[..4].to_vec()).unwrap();
    let (_, state2) = run_scan(&c, &SequenceBatch::new(prefix, None).unwrap(), &zero);
    assert_eq!(state, state2);
}

fn bi(
    fwd: &Cell<f64>,
    bwd: &Cell<f64>,
    data: &Tensor<f64>,
    lengths: Option<&[usize]>,
) -> Tensor<f64> {
    let tape = Tape::new();
    let (bf, bb) = (fwd.bind(&tape).unwrap(), bwd.bind(&tape).unwrap());
    let batch = data.shape()[1];
    let inputs: Vec<_> = (0..data.shape()[0])
        .map(|t| tape.constant(data.outer(t).unwrap()).unwrap())
        .collect();
    let z = |c: &Cell<f64>| c.zero_state(batch).unwrap().try_map(|t| tape.constant(t.clone())).unwrap();
    let out = bidirectional_scan(fwd, bwd, &tape, &bf, &bb, &inputs, lengths, (z(fwd), z(bwd)), &mut Mode::Eval)
        .unwrap();
    stack_steps(&tape, &out.outputs).unwrap()
}

fn at(t: &Tensor<f64>, step: usize, row: usize, col: usize) -> f64 {
    let (b, w) = (t.shape()[1], t.shape()[2]);
    t.data()[(step * b + row) * w + col]
}

#[test]
fn palindrome_with_tied_cells_mirrors_halves() {
    let c = cell(CellKind::Gru, 2, 3, 11);
    let mut rng = Rng::new(12);
    let half = rand_tensor(&[3, 1, 2], &mut rng);
    let mut data = half.data().to_vec();
    data.extend_from_slice(&half.data()[2..4]);
    data.extend_from_slice(&half.data()[0..2]);
    let data = Tensor::from_vec(&[5, 1, 2], data).unwrap();
    let out = bi(&c, &c, &data, None);
    for t in 0..5 {
        for k in 0..3 {
            assert!((at(&out, t, 0, k) - at(&out, 4 - t, 0, 3 + k)).abs() < 1e-14);
        }
    }
}

#[test]
fn single_step_bidirectional_concatenates() {
    let f = cell(CellKind::Lstm, 2, 3, 13);
    let g = cell(CellKind::Lstm, 2, 3, 14);
    let data = rand_tensor(&[1, 2, 2], &mut Rng::new(15));
    let out = bi(&f, &g, &data, None);
    let (of, _) = run_scan(&f, &SequenceBatch::new(data.clone(), None).unwrap(), &f.zero_state(2).unwrap());
    let (og, _) = run_scan(&g, &SequenceBatch::new(data, None).unwrap(), &g.zero_state(2).unwrap());
    for b in 0..2 {
        for k in 0..3 {
            assert_eq!(at(&out, 0, b, k), at(&of, 0, b, k));
            assert_eq!(at(&out, 0, b, 3 + k), at(&og, 0, b, k));
        }
    }
}

fn reversed(data: &Tensor<f64>) -> Tensor<f64> {
    let steps = data.shape()[0];
    Tensor::stack(&(0..steps).rev().map(|t| data.outer(t).unwrap()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn reversing_input_swaps_halves() {
    let f = cell(CellKind::Mgu, 2, 3, 16);
    let g = cell(CellKind::Mgu, 2, 3, 17);
    let data = rand_tensor(&[6, 2, 2], &mut Rng::new(18));
    let a = bi(&f, &g, &data, None);
    let b = bi(&g, &f, &reversed(&data), None);
    for t in 0..6 {
        for r in 0..2 {
            for k in 0..3 {
                assert!((at(&a, t, r, k) - at(&b, 5 - t, r, 3 + k)).abs() < 1e-14);
                assert!((at(&a, t, r, 3 + k) - at(&b, 5 - t, r, k)).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn bidirectional_reverses_within_each_length() {
    let f = cell(CellKind::Elman { activation: recurrent::cells::Activation::Tanh }, 2, 3, 19);
    let g = cell(CellKind::Gru, 2, 3, 20);
    let data = rand_tensor(&[5, 2, 2], &mut Rng::new(21));
    let lengths = [5, 3];
    let out = bi(&f, &g, &data, Some(&lengths));
    for (row, &len) in lengths.iter().enumerate() {
        let steps: Vec<f64> = (0..len)
            .rev()
            .flat_map(|t| data.data()[(t * 2 + row) * 2..(t * 2 + row) * 2 + 2].to_vec())
            .collect();
        let rev = Tensor::from_vec(&[len, 1, 2], steps).unwrap();
        let (ref_out, _) = reference::scan(&g, &rev, None, &g.zero_state(1).unwrap());
        for t in 0..5 {
            for k in 0..3 {
                let want = if t < len { ref_out[len - 1 - t][0][k] } else { 0.0 };
                assert!((at(&out, t, row, 3 + k) - want).abs() < 1e-12, "row {row} t {t}");
            }
        }
    }
}

#[test]
fn bidirectional_rejects_mismatched_directions() {
    let f = cell(CellKind::Gru, 2, 3, 0);
    let g = cell(CellKind::Gru, 2, 4, 0);
    assert!(recurrent::layers::Bidirectional::new::<f64>(f, g).is_err());
}

fn stack_out(stack: &StackedRnn<f64>, data: &Tensor<f64>, mode: &mut Mode<'_>) -> Tensor<f64> {
    let tape = Tape::new();
    let bound = stack.bind(&tape).unwrap();
    let inputs = SequenceBatch::new(data.clone(), None).unwrap().to_vars(&tape).unwrap();
    let (outs, _) = stack.forward(&tape, &bound, &inputs, None, None, mode).unwrap();
    stack_steps(&tape, &outs).unwrap()
}

#[test]
fn single_layer_stack_is_scan() {
    let spec = CellSpec::new(CellKind::Lstm, 3, 4).unwrap();
    let stack = StackedRnn::<f64>::new(&LayerSpec::single(spec), &mut Rng::new(22)).unwrap();
    let c = Cell::<f64>::new(spec, &mut Rng::new(22)).unwrap();
    let data = rand_tensor(&[5, 2, 3], &mut Rng::new(23));
    let (want, _) = run_scan(&c, &SequenceBatch::new(data.clone(), None).unwrap(), &c.zero_state(2).unwrap());
    assert_eq!(stack_out(&stack, &data, &mut Mode::Eval), want);
}

#[test]
fn eval_mode_dropout_is_identity() {
    let spec = CellSpec::new(CellKind::Gru, 3, 3).unwrap();
    let base = LayerSpec { layers: 3, ..LayerSpec::single(spec) };
    let with_dropout = LayerSpec { dropout: 0.5, ..base };
    let a = StackedRnn::<f64>::new(&base, &mut Rng::new(24)).unwrap();
    let b = StackedRnn::<f64>::new(&with_dropout, &mut Rng::new(24)).unwrap();
    let data = rand_tensor(&[4, 2, 3], &mut Rng::new(25));
    assert_eq!(stack_out(&a, &data, &mut Mode::Eval), stack_out(&b, &data, &mut Mode::Eval));
    let mut rng = Rng::new(26);
    assert_ne!(stack_out(&a, &data, &mut Mode::Eval), stack_out(&b, &data, &mut Mode::Train(&mut rng)));
}

#[test]
fn residual_around_zero_lstm_is_identity() {
    let spec = CellSpec::new(CellKind::Lstm, 4, 4).unwrap();
    let ls = LayerSpec { layers: 2, residual: true, ..LayerSpec::single(spec) };
    let mut stack = StackedRnn::<f64>::new(&ls, &mut Rng::new(27)).unwrap();
    for p in stack.parameters_mut() {
        p.scale_in_place(0.0);
    }
    let data = rand_tensor(&[3, 2, 4], &mut Rng::new(28));
    assert_eq!(stack_out(&stack, &data, &mut Mode::Eval), data);
}

#[test]
fn bidirectional_stack_runs() {
    let spec = CellSpec::new(CellKind::from_name("lem").unwrap(), 3, 4).unwrap();
    let ls = LayerSpec { layers: 2, direction: Direction::Bidirectional, ..LayerSpec::single(spec) };
    let stack = StackedRnn::<f64>::new(&ls, &mut Rng::new(29)).unwrap();
    let out = stack_out(&stack, &rand_tensor(&[4, 2, 3], &mut Rng::new(30)), &mut Mode::Eval);
    assert_eq!(out.shape(), &[4, 2, 8]);
}

#[test]
fn wrapped_zero_cell_is_identity() {
    let mut c = cell(CellKind::Lstm, 3, 3, 31);
    c.zero_params();
    let w = wrap(wrap(Box::new(c), Wrapper::Dropout(0.0)).unwrap(), Wrapper::Residual).unwrap();
    let data = rand_tensor(&[4, 2, 3], &mut Rng::new(32));
    let tape = Tape::new();
    let bound = w.bind(&tape).unwrap();
    let batch = SequenceBatch::new(data.clone(), None).unwrap();
    let mut rng = Rng::new(0);
    let out = scan_batch(&w, &tape, &bound, &batch, None, &mut Mode::Train(&mut rng)).unwrap();
    assert_eq!(stack_steps(&tape, &out.outputs).unwrap(), data);
}

#[test]
fn zero_dropout_is_bit_identical_in_training() {
    for kind in CellKind::all() {
        let c = cell(kind, 3, 4, 33);
        let d = Dropout::new(c.clone(), 0.0).unwrap();
        let data = rand_tensor(&[3, 2, 3], &mut Rng::new(34));
        let batch = SequenceBatch::new(data, None).unwrap();
        let run = |r: &dyn Recurrent<f64>| {
            let tape = Tape::new();
            let bound = r.bind(&tape).unwrap();
            let mut rng = Rng::new(1);
            let o = scan_batch(r, &tape, &bound, &batch, None, &mut Mode::Train(&mut rng)).unwrap();
            stack_steps(&tape, &o.outputs).unwrap()
        };
        assert_eq!(run(&c), run(&d), "{}", kind.name());
    }
}

#[test]
fn wrapped_cells_pass_the_interface_suite() {
    for kind in CellKind::all() {
        let c = cell(kind, 4, 4, 35);
        let dropped = wrap(Box::new(c.clone()), Wrapper::Dropout(0.3)).unwrap();
        conformance::check_recurrent(&*dropped, 36).unwrap();
        let res = wrap(Box::new(c.clone()), Wrapper::Residual).unwrap();
        conformance::check_recurrent(&*res, 37).unwrap();
        let both = wrap(wrap(Box::new(c), Wrapper::Residual).unwrap(), Wrapper::Dropout(0.1)).unwrap();
        conformance::check_recurrent(&*both, 38).unwrap();
    }
}

#[test]
fn dropout_preserves_the_mean() {
    let p = 0.3;
    let mut rng = Rng::new(39);
    let n = 10_000;
    let mut total = 0.0;
    for _ in 0..n {
        let m = recurrent::layers::dropout_mask::<f64>(&[1], p, &mut rng).unwrap();
        total += m.data()[0];
    }
    let mean = total / n as f64;
    assert!((mean - 1.0).abs() < 0.02, "{mean}");
}

#[test]
fn training_dropout_is_seeded() {
    let c = cell(CellKind::Gru, 3, 4, 40);
    let d = Dropout::new(c, 0.5).unwrap();
    let batch = SequenceBatch::new(rand_tensor(&[3, 2, 3], &mut Rng::new(41)), None).unwrap();
    let run = |seed| {
        let tape = Tape::new();
        let bound = d.bind(&tape).unwrap();
        let mut rng = Rng::new(seed);
        let o = scan_batch(&d, &tape, &bound, &batch, None, &mut Mode::Train(&mut rng)).unwrap();
        stack_steps(&tape, &o.outputs).unwrap()
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn bptt_gradcheck_every_cell() {
    let (t, b, i, h) = (5, 2, 3, 3);
    for kind in CellKind::all() {
        let c = cell(kind, i, h, 42);
        let spec = *c.spec();
        let mut rng = Rng::new(43);
        let data = rand_tensor(&[t, b, i], &mut rng);
        let state0 = c.zero_state(b).unwrap().map(|z| rand_tensor(z.shape(), &mut rng));
        let n = c.params().len();
        let mut checked: Vec<Tensor<f64>> = c.params().tensors().to_vec();
        checked.extend(state0.parts().into_iter().cloned());
        let report = grad_check(
            |tape, vars| {
                let leaves = vars[..n].to_vec();
                let work = prepare(&spec, tape, &leaves)?;
                let bound = Bound { leaves, work };
                let inputs = (0..t)
                    .map(|s| tape.constant(data.outer(s)?))
                    .collect::<recurrent::Result<Vec<_>>>()?;
                let mut parts = vars[n..].iter();
                let state = state0.map(|_| *parts.next().unwrap());
                let out = scan(&c, tape, &bound, &inputs, None, state, &mut Mode::Eval)?;
                let all = tape.concat_rows(&out.outputs)?;
                tape.mean(all)
            },
            &checked,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{}: {report:?}", kind.name());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn masked_rows_match_truncated_scans(
        kind_index in 0usize..13,
        lengths in proptest::collection::vec(1usize..=6, 1..4),
        seed in 0u64..1000,
    ) {
        let kind = CellKind::all()[kind_index];
        let c = cell(kind, 2, 3, seed);
        let batch = lengths.len();
        let data = rand_tensor(&[6, batch, 2], &mut Rng::new(seed + 1));
        let (_, state) = run_scan(&c, &SequenceBatch::new(data.clone(), Some(lengths.clone())).unwrap(), &c.zero_state(batch).unwrap());
        let rows = reference::rows_of(&state);
        for (row, &len) in lengths.iter().enumerate() {
            let steps: Vec<f64> = (0..len)
                .flat_map(|t| data.data()[(t * batch + row) * 2..(t * batch + row) * 2 + 2].to_vec())
                .collect();
            let alone = Tensor::from_vec(&[len, 1, 2], steps).unwrap();
            let (_, s) = run_scan(&c, &SequenceBatch::new(alone, None).unwrap(), &c.zero_state(1).unwrap());
            let single = &reference::rows_of(&s)[0];
            for (a, b) in rows[row].iter().flatten().zip(single.iter().flatten()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

