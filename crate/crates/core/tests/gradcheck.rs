//! Central finite differences against reverse-mode gradients.

use ecgrhythm::autodiff::{Rng, Tape, Tensor, Var};
use ecgrhythm::dsp::Spectrogram;
use ecgrhythm::model::{Frontend, Model, ModelConfig, Sequence};

const H: f64 = 1e-5;
const OP_TOL: f64 = 1e-4;
const E2E_TOL: f64 = 1e-3;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Worst relative error of d f / d inputs.
fn check<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |vals: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]);
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
    }
    worst
}

fn rand(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rng.normals(n)).unwrap()
}

/// Values bounded away from zero (for kinked ops).
fn away_from_zero(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.uniform_range(0.2, 1.5);
            if rng.uniform() < 0.5 {
                -v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Fixed random projection to a scalar.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Var {
    let shape = tape.shape(y).to_vec();
    let w = rand(&mut Rng::new(seed), &shape);
    let w = tape.constant(w);
    let p = tape.mul(y, w).unwrap();
    tape.sum(p).unwrap()
}

macro_rules! op_case {
    ($name:ident, $inputs:expr, |$tape:ident, $v:ident| $body:expr) => {
        #[test]
        fn $name() {
            let mut rng = Rng::new(stringify!($name).len() as u64);
            let inputs: Vec<Tensor> = $inputs(&mut rng);
            let err = check(&inputs, |$tape: &mut Tape, $v: &[Var]| {
                let y = $body;
                project($tape, y, 99)
            });
            assert!(err <= OP_TOL, "{}: relative error {err:e}", stringify!($name));
        }
    };
}

op_case!(add, |r: &mut Rng| vec![rand(r, &[3, 4]), rand(r, &[3, 4])], |t, v| t.add(v[0], v[1]).unwrap());
op_case!(sub, |r: &mut Rng| vec![rand(r, &[3, 4]), rand(r, &[3, 4])], |t, v| t.sub(v[0], v[1]).unwrap());
op_case!(mul, |r: &mut Rng| vec![rand(r, &[3, 4]), rand(r, &[3, 4])], |t, v| t.mul(v[0], v[1]).unwrap());
op_case!(affine, |r: &mut Rng| vec![rand(r, &[5])], |t, v| t.affine(v[0], -1.7, 0.3).unwrap());
op_case!(matmul, |r: &mut Rng| vec![rand(r, &[3, 4]), rand(r, &[4, 2])], |t, v| t.matmul(v[0], v[1]).unwrap());
op_case!(
    dense,
    |r: &mut Rng| vec![rand(r, &[2, 3, 4]), rand(r, &[4, 5]), rand(r, &[5])],
    |t, v| t.dense(v[0], v[1], v[2]).unwrap()
);
op_case!(
    conv1d_padded,
    |r: &mut Rng| vec![rand(r, &[2, 2, 7]), rand(r, &[3, 2, 3]), rand(r, &[3])],
    |t, v| t.conv1d(v[0], v[1], v[2], 1, 1).unwrap()
);
op_case!(
    conv1d_strided,
    |r: &mut Rng| vec![rand(r, &[1, 2, 9]), rand(r, &[2, 2, 3]), rand(r, &[2])],
    |t, v| t.conv1d(v[0], v[1], v[2], 2, 0).unwrap()
);
op_case!(avg_pool1d, |r: &mut Rng| vec![rand(r, &[2, 3, 9])], |t, v| t.avg_pool1d(v[0], 3, 3).unwrap());
op_case!(relu, |r: &mut Rng| vec![away_from_zero(r, &[4, 5])], |t, v| t.relu(v[0]).unwrap());
op_case!(tanh, |r: &mut Rng| vec![rand(r, &[4, 5])], |t, v| t.tanh(v[0]).unwrap());
op_case!(sigmoid, |r: &mut Rng| vec![rand(r, &[4, 5])], |t, v| t.sigmoid(v[0]).unwrap());
op_case!(exp, |r: &mut Rng| vec![rand(r, &[4, 5])], |t, v| t.exp(v[0]).unwrap());
op_case!(softmax_last, |r: &mut Rng| vec![rand(r, &[3, 5])], |t, v| t.softmax(v[0], 1).unwrap());
op_case!(softmax_first, |r: &mut Rng| vec![rand(r, &[3, 5])], |t, v| t.softmax(v[0], 0).unwrap());
op_case!(
    concat,
    |r: &mut Rng| vec![rand(r, &[2, 3]), rand(r, &[2, 2])],
    |t, v| t.concat(&[v[0], v[1], v[0]], 1).unwrap()
);
op_case!(slice, |r: &mut Rng| vec![rand(r, &[4, 6])], |t, v| t.slice(v[0], 1, 2, 3).unwrap());
op_case!(mean_axis, |r: &mut Rng| vec![rand(r, &[2, 4, 3])], |t, v| t.mean_axis(v[0], 1).unwrap());
op_case!(
    scale_rows,
    |r: &mut Rng| vec![rand(r, &[4, 3]), rand(r, &[4, 1])],
    |t, v| t.scale_rows(v[0], v[1]).unwrap()
);
op_case!(
    gru_cell,
    |r: &mut Rng| vec![rand(r, &[6, 9]), rand(r, &[2, 3]), rand(r, &[3, 9]), rand(r, &[9])],
    |t, v| t.gru_cell(v[0], 2, v[1], v[2], v[3]).unwrap()
);
op_case!(
    reparameterize,
    |r: &mut Rng| vec![rand(r, &[3, 4]), rand(r, &[3, 4])],
    |t, v| t.reparameterize(v[0], v[1], 0.7, &mut Rng::new(5)).unwrap()
);

#[test]
fn reductions() {
    let mut rng = Rng::new(3);
    let x = vec![rand(&mut rng, &[3, 4])];
    assert!(check(&x, |t, v| t.sum(v[0]).unwrap()) <= OP_TOL);
    assert!(check(&x, |t, v| t.mean(v[0]).unwrap()) <= OP_TOL);
}

#[test]
fn cross_entropy_losses() {
    let mut rng = Rng::new(4);
    let logits = vec![rand(&mut rng, &[4, 5])];
    let labels = [0, 3, 4, 1];
    assert!(check(&logits, |t, v| t.softmax_cross_entropy(v[0], &labels).unwrap()) <= OP_TOL);
    assert!(
        check(&logits, |t, v| {
            let p = t.softmax(v[0], 1).unwrap();
            t.cross_entropy(p, &labels).unwrap()
        }) <= OP_TOL
    );
}

#[test]
fn representation_loss_terms() {
    let mut rng = Rng::new(5);
    let ins = vec![rand(&mut rng, &[6, 8]), rand(&mut rng, &[6, 8])];
    assert!(check(&ins, |t, v| t.gaussian_kl(v[0], v[1]).unwrap()) <= OP_TOL);
    let ins = vec![rand(&mut rng, &[6, 20]), rand(&mut rng, &[6, 20])];
    assert!(check(&ins, |t, v| t.mse(v[0], v[1]).unwrap()) <= OP_TOL);
}

fn toy_spectrogram() -> Spectrogram {
    let mut rng = Rng::new(11);
    let values = (0..60 * 12).map(|_| rng.uniform()).collect();
    Spectrogram::from_values(values, 60, 12, 200.0 / 1024.0, 5).unwrap()
}

fn small_model(frontend: Frontend) -> Model {
    let cfg = ModelConfig {
        rnn_hidden: 3,
        attention_dim: 3,
        head_hidden: 4,
        ..ModelConfig::default()
    };
    Model::new(&cfg, frontend, 21).unwrap()
}

/// Gradient of a whole-network loss with respect to one parameter set,
/// checked on every scalar.
fn end_to_end<F>(params: &[Tensor], loss: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    check(params, loss)
}

#[test]
fn representation_objective_end_to_end() {
    let model = small_model(Frontend::Vae);
    let spec = toy_spectrogram();
    let params = model.representation.params().tensors().to_vec();
    let err = end_to_end(&params, |tape, vars| {
        let x = model.representation.frames_input(tape, spec.frames_major()).unwrap();
        let l = model
            .representation
            .loss(tape, vars, x, 0.5, &mut Rng::new(8))
            .unwrap();
        l.total
    });
    assert!(err <= E2E_TOL, "representation objective: {err:e}");
}

#[test]
fn classification_objective_end_to_end() {
    let model = small_model(Frontend::Vae);
    let spec = toy_spectrogram();
    let latents = model.latents(&[&spec]).unwrap().remove(0);
    let mut other = latents.clone();
    other.means.iter_mut().for_each(|v| *v = -*v);
    let params = model.classifier.params().tensors().to_vec();
    let err = end_to_end(&params, |tape, vars| {
        let input = model
            .sample_latent_input(tape, &[&latents, &other], 0.2, &mut Rng::new(3))
            .unwrap();
        let logits = model.classifier.logits(tape, vars, input).unwrap();
        tape.softmax_cross_entropy(logits, &[2, 4]).unwrap()
    });
    assert!(err <= E2E_TOL, "classification objective: {err:e}");
}

#[test]
fn joint_dense_projection_end_to_end() {
    let model = small_model(Frontend::DenseProjection);
    let spec = toy_spectrogram();
    let rep = model.representation.params().tensors().to_vec();
    let n_rep = rep.len();
    let mut all = rep;
    all.extend(model.classifier.params().tensors().iter().cloned());
    let err = end_to_end(&all, |tape, vars| {
        let logits = model
            .joint_logits(tape, &vars[..n_rep], &vars[n_rep..], &[&spec])
            .unwrap();
        tape.softmax_cross_entropy(logits, &[1]).unwrap()
    });
    assert!(err <= E2E_TOL, "joint objective: {err:e}");
}

#[test]
fn sequence_through_gru_stack() {
    let model = small_model(Frontend::Vae);
    let mut rng = Rng::new(2);
    let x = rand(&mut rng, &[7 * 2, 8]);
    let params = model.classifier.params().tensors().to_vec();
    let err = end_to_end(&params, |tape, vars| {
        let data = tape.constant(x.clone());
        let logits = model
            .classifier
            .logits(tape, vars, Sequence { data, steps: 7, batch: 2 })
            .unwrap();
        tape.softmax_cross_entropy(logits, &[0, 3]).unwrap()
    });
    assert!(err <= E2E_TOL, "gru stack: {err:e}");
}
