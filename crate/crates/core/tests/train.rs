use recurrent::cells::{prepare, Bound, Mode};
use recurrent::gradcheck::{grad_check, DEFAULT_EPS};
use recurrent::layers::{scan, LayerSpec};
use recurrent::optim::OptimizerKind;
use recurrent::tasks::{gen_adding, TaskKind, Targets};
use recurrent::train::{TrainConfig, Trainer};
use recurrent::{Cell, CellKind, CellSpec, Recurrent, Rng, Tensor};

fn adding_config(kind: CellKind, steps: usize, hidden: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        task: TaskKind::Adding { steps },
        layer: LayerSpec::single(CellSpec::new(kind, 2, hidden).unwrap()),
        optimizer: OptimizerKind::adam(lr),
        clip_norm: Some(1.0),
        epochs: 1,
        batches_per_epoch: 1,
        batch_size: 8,
        val_batches: 1,
        seed: 5,
    }
}

#[test]
fn gated_cells_memorize_a_fixed_batch() {
    for kind in [CellKind::Gru, CellKind::Lstm] {
        let mut trainer = Trainer::<f64>::new(adding_config(kind, 10, 32, 1e-2)).unwrap();
        let batch = gen_adding::<f64>(10, 8, &mut Rng::new(99)).unwrap();
        let mut fitted = None;
        for step in 1..=2000 {
            trainer.train_step(&batch).unwrap();
            if step % 50 == 0 {
                let (mse, _) = trainer.model().evaluate(std::slice::from_ref(&batch)).unwrap();
                if mse < 1e-3 {
                    fitted = Some((step, mse));
                    break;
                }
            }
        }
        assert!(fitted.is_some(), "{} did not fit 8 sequences in 2000 steps", kind.name());
    }
}

#[test]
fn zero_learning_rate_over_many_epochs() {
    let mut c = adding_config(CellKind::IndRnn { activation: recurrent::cells::Activation::Relu }, 8, 6, 0.0);
    c.epochs = 4;
    c.optimizer = OptimizerKind::sgd(0.0, 0.9);
    let mut t = Trainer::<f64>::new(c).unwrap();
    let before: Vec<Tensor<f64>> = t.model().parameters().into_iter().cloned().collect();
    t.run().unwrap();
    let after: Vec<Tensor<f64>> = t.model().parameters().into_iter().cloned().collect();
    assert_eq!(before, after);
}

#[test]
fn identical_seeds_give_identical_metric_streams() {
    let mut c = adding_config(CellKind::from_name("cornn").unwrap(), 12, 8, 5e-3);
    c.epochs = 3;
    c.batches_per_epoch = 4;
    let run = |c: TrainConfig| {
        let mut t = Trainer::<f64>::new(c).unwrap();
        t.run()
            .unwrap()
            .iter()
            .map(|m| (m.epoch, m.split, m.loss.to_bits(), m.metric.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(run(c), run(c));
    let mut other = c;
    other.seed += 1;
    assert_ne!(run(c), run(other));
}

#[test]
fn validation_stream_is_disjoint_from_training() {
    let c = adding_config(CellKind::Gru, 20, 4, 1e-3);
    let val = recurrent::train::validation_set::<f64>(&c).unwrap();
    let root = Rng::new(c.seed);
    let train = c.task.generate::<f64>(c.batch_size, &mut root.split(recurrent::train::STREAM_TRAIN)).unwrap();
    assert_ne!(val[0].inputs, train.inputs);
}

/// Gradient of MSE(W·h_T + b, y) with respect to every cell and head
/// parameter and the initial state, through a T=4 scan.
#[test]
fn full_pipeline_gradcheck() {
    let kinds = [
        CellKind::Lstm,
        CellKind::from_name("cornn").unwrap(),
        CellKind::IndRnn { activation: recurrent::cells::Activation::Relu },
    ];
    let (steps, batch, hidden) = (4, 3, 5);
    for kind in kinds {
        let mut rng = Rng::new(3);
        let c = Cell::<f64>::new(CellSpec::new(kind, 2, hidden).unwrap(), &mut rng).unwrap();
        let spec = *c.spec();
        let data = gen_adding::<f64>(steps, batch, &mut rng).unwrap();
        let Targets::Regression(y) = data.targets.clone() else { unreachable!() };
        let head_w = Tensor::from_vec(&[1, hidden], (0..hidden).map(|_| rng.next_gaussian()).collect()).unwrap();
        let head_b = Tensor::vector(vec![0.1]);
        let n = c.params().len();
        let mut params: Vec<Tensor<f64>> = c.params().tensors().to_vec();
        params.push(head_w);
        params.push(head_b);
        let state0 = c.zero_state(batch).unwrap().map(|z| {
            Tensor::from_vec(z.shape(), (0..z.len()).map(|_| 2.0 * rng.next_uniform() - 1.0).collect()).unwrap()
        });
        params.extend(state0.parts().into_iter().cloned());
        let report = grad_check(
            |tape, vars| {
                let leaves = vars[..n].to_vec();
                let work = prepare(&spec, tape, &leaves)?;
                let bound = Bound { leaves, work };
                let inputs = (0..steps)
                    .map(|s| tape.constant(data.inputs.outer(s)?))
                    .collect::<recurrent::Result<Vec<_>>>()?;
                let mut parts = vars[n + 2..].iter();
                let state = state0.map(|_| *parts.next().unwrap());
                let out = scan(&c, tape, &bound, &inputs, None, state, &mut Mode::Eval)?;
                let pred = tape.linear(out.outputs[steps - 1], vars[n], Some(vars[n + 1]))?;
                recurrent::loss::mse(tape, pred, &y)
            },
            &params,
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{}: {report:?}", kind.name());
        assert!(report.checked > 0);
    }
}
