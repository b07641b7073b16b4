use banditseq::diffcore::{finite_diff_check, Gradients, NodeId, ParamStore, SeededRng, Tape, Tensor};
use proptest::prelude::*;

fn rand_tensor(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

type Build = fn(&mut Tape, &[NodeId]) -> NodeId;

/// Checks `root = Σ_i w_i op(params)_i` for fixed random weights.
fn check_primitive(name: &str, shapes: &[&[usize]], range: (f64, f64), op: Build) {
    for trial in 0..5u64 {
        let mut rng = SeededRng::new(1000 + trial).fork(name);
        let mut store = ParamStore::new();
        for (i, s) in shapes.iter().enumerate() {
            store.insert(format!("p{i}"), rand_tensor(&mut rng, s, range.0, range.1)).unwrap();
        }
        let weights_rng = rng.fork("weights");
        let loss = |ps: &ParamStore| -> banditseq::Result<(f64, Gradients)> {
            let mut t = Tape::new();
            let nodes: Vec<NodeId> = ps.ids().map(|id| t.param(ps, id)).collect();
            let out = op(&mut t, &nodes);
            let n = t.value(out).len();
            let mut wr = weights_rng.clone();
            let w = t.input(Tensor::new(t.value(out).shape().to_vec(), (0..n).map(|_| 0.5 + wr.uniform()).collect())?);
            let root = if n == 1 { t.mul(out, w) } else { t.dot(out, w) };
            Ok((t.scalar(root), t.gradients(root)?))
        };
        let report = finite_diff_check(&store, 1e-5, 1e-6, loss).unwrap();
        assert!(
            report.passed(),
            "{name} trial {trial}: max rel error {:e}",
            report.max_rel_error()
        );
    }
}

#[test]
fn matvec() {
    check_primitive("matvec", &[&[3, 4], &[4]], (-1.0, 1.0), |t, p| t.matvec(p[0], p[1]));
}

#[test]
fn matmul() {
    check_primitive("matmul", &[&[2, 3], &[3, 4]], (-1.0, 1.0), |t, p| t.matmul(p[0], p[1]));
}

#[test]
fn transpose() {
    check_primitive("transpose", &[&[2, 3]], (-1.0, 1.0), |t, p| t.transpose(p[0]));
}

#[test]
fn add_sub_mul_scale() {
    check_primitive("add", &[&[5], &[5]], (-1.0, 1.0), |t, p| t.add(p[0], p[1]));
    check_primitive("sub", &[&[5], &[5]], (-1.0, 1.0), |t, p| t.sub(p[0], p[1]));
    check_primitive("mul", &[&[5], &[5]], (0.2, 1.0), |t, p| t.mul(p[0], p[1]));
    check_primitive("scale", &[&[5]], (-1.0, 1.0), |t, p| t.scale(p[0], -2.5));
}

#[test]
fn nonlinearities() {
    check_primitive("tanh", &[&[6]], (-1.5, 1.5), |t, p| t.tanh(p[0]));
    check_primitive("sigmoid", &[&[6]], (-2.0, 2.0), |t, p| t.sigmoid(p[0]));
    check_primitive("log", &[&[6]], (0.5, 2.0), |t, p| t.log(p[0]));
}

#[test]
fn softmaxes() {
    check_primitive("softmax", &[&[5]], (-1.0, 1.0), |t, p| t.softmax(p[0]));
    check_primitive("log_softmax", &[&[5]], (-1.0, 1.0), |t, p| t.log_softmax(p[0]));
}

#[test]
fn structural() {
    check_primitive("concat", &[&[2], &[3]], (-1.0, 1.0), |t, p| t.concat(&[p[0], p[1], p[0]]));
    check_primitive("stack_rows", &[&[3], &[3]], (-1.0, 1.0), |t, p| t.stack_rows(&[p[1], p[0]]));
    check_primitive("row", &[&[4, 3]], (-1.0, 1.0), |t, p| t.row(p[0], 2));
    check_primitive("pick", &[&[4]], (-1.0, 1.0), |t, p| t.pick(p[0], 1));
    check_primitive("slice", &[&[6]], (-1.0, 1.0), |t, p| t.slice(p[0], 1, 3));
    check_primitive("sum", &[&[6]], (-1.0, 1.0), |t, p| t.sum(p[0]));
    check_primitive("dot", &[&[4], &[4]], (-1.0, 1.0), |t, p| t.dot(p[0], p[1]));
}

#[test]
fn composite_attention_block() {
    // one step of general attention, as the decoder uses it
    check_primitive("attention", &[&[3, 4], &[4, 4], &[4]], (-1.0, 1.0), |t, p| {
        let wh = t.matvec(p[1], p[2]);
        let scores = t.matvec(p[0], wh);
        let a = t.softmax(scores);
        let mt = t.transpose(p[0]);
        let ctx = t.matvec(mt, a);
        let both = t.concat(&[ctx, p[2]]);
        t.tanh(both)
    });
}

fn two_losses(store: &ParamStore, a: f64, b: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let build = |t: &mut Tape| {
        let ids: Vec<_> = store.ids().collect();
        let (w, x) = (t.param(store, ids[0]), t.param(store, ids[1]));
        let y = t.matvec(w, x);
        let s = t.tanh(y);
        let f = t.sum(s);
        let sm = t.log_softmax(y);
        let g = t.pick(sm, 0);
        (f, g)
    };
    let mut t = Tape::new();
    let (f, g) = build(&mut t);
    let fa = t.scale(f, a);
    let gb = t.scale(g, b);
    let combo = t.add(fa, gb);
    let gc = t.gradients(combo).unwrap().flatten(store);
    let gf = t.gradients(f).unwrap().flatten(store);
    let gg = t.gradients(g).unwrap().flatten(store);
    (gc, gf, gg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = SeededRng::new(seed);
        let mut store = ParamStore::new();
        store.insert("w", rand_tensor(&mut rng, &[3, 4], -1.0, 1.0)).unwrap();
        store.insert("x", rand_tensor(&mut rng, &[4], -1.0, 1.0)).unwrap();
        let (gc, gf, gg) = two_losses(&store, a, b);
        for i in 0..gc.len() {
            let want = a * gf[i] + b * gg[i];
            prop_assert!((gc[i] - want).abs() <= 1e-12 * (1.0 + want.abs()), "{} vs {}", gc[i], want);
        }
    }

    #[test]
    fn backward_accumulates_into_store(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let mut store = ParamStore::new();
        let id = store.insert("p", rand_tensor(&mut rng, &[4], -1.0, 1.0)).unwrap();
        let mut t = Tape::new();
        let p = t.param(&store, id);
        let q = t.mul(p, p);
        let root = t.sum(q);
        t.backward(root, &mut store).unwrap();
        t.backward(root, &mut store).unwrap();
        for (g, v) in store.grad(id).data().iter().zip(store.value(id).data()) {
            prop_assert!((g - 4.0 * v).abs() < 1e-12);
        }
    }
}
