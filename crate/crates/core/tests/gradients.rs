use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trustmv::diffcore::{grad_check, Graph, OpKind, Tensor, Var};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values with magnitude in `[0.05, 2]` and random sign, clear of the kinks at 0.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let x = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) {
                x
            } else {
                -x
            }
        })
        .collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn inputs_for(kind: OpKind, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (n, d) = (rng.random_range(1..5), rng.random_range(1..5));
    match kind {
        OpKind::MatMul => {
            let k = rng.random_range(1..5);
            vec![random(rng, n, k, -2.0, 2.0), random(rng, k, d, -2.0, 2.0)]
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            // alternate plain and broadcast right-hand shapes
            let (r, c) = match rng.random_range(0..4) {
                0 => (n, d),
                1 => (n, 1),
                2 => (1, d),
                _ => (1, 1),
            };
            vec![random(rng, n, d, -2.0, 2.0), random(rng, r, c, -2.0, 2.0)]
        }
        OpKind::Div => {
            let (r, c) = if rng.random_bool(0.5) { (n, d) } else { (n, 1) };
            vec![random(rng, n, d, -2.0, 2.0), random(rng, r, c, 0.5, 3.0)]
        }
        OpKind::Dot => vec![random(rng, n, d, -2.0, 2.0), random(rng, n, d, -2.0, 2.0)],
        OpKind::Relu | OpKind::Abs => vec![away_from_zero(rng, n, d)],
        OpKind::Log => vec![random(rng, n, d, 0.2, 5.0)],
        OpKind::Digamma | OpKind::Lgamma => vec![random(rng, n, d, 0.3, 30.0)],
        _ => vec![random(rng, n, d, -3.0, 3.0)],
    }
}

/// `sum(op(x) * w)` for a fixed random `w`, so every output entry matters.
fn projected(
    kind: OpKind,
    weights: Tensor,
) -> impl Fn(&mut Graph, &[Var]) -> trustmv::error::Result<Var> {
    move |g, x| {
        let y = g.forward_op(kind, x)?;
        let w = g.constant(weights.clone());
        let p = g.mul(y, w)?;
        Ok(g.sum(p))
    }
}

fn output_shape(kind: OpKind, inputs: &[Tensor]) -> [usize; 2] {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let y = g.forward_op(kind, &vars).unwrap();
    g.shape(y)
}

#[test]
fn every_op_matches_central_differences_on_100_seeds() {
    for kind in OpKind::ALL {
        let mut worst = 0.0_f64;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = inputs_for(kind, &mut rng);
            let [r, c] = output_shape(kind, &inputs);
            let w = random(&mut rng, r, c, -1.0, 1.0);
            let report = grad_check(projected(kind, w), &inputs, 1e-5, 1e-4).unwrap();
            worst = worst.max(report.max_rel_error());
        }
        assert!(worst < 1e-4, "{kind:?}: max relative error {worst:e}");
    }
}

#[test]
fn auxiliary_ops_match_central_differences() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = vec![away_from_zero(&mut rng, 3, 4)];
        let report = grad_check(
            |g, v| {
                let a = g.scale(v[0], -1.7);
                let b = g.offset(a, 0.3);
                let c = g.clamp(b, -1.0, 1.0);
                let e = g.element(v[0], 1, 2)?;
                let col = g.column(v[0], 3)?;
                let m = g.mul(c, e)?;
                let m = g.add(m, col)?;
                let t = g.transpose(m);
                let n = g.neg(t);
                Ok(g.sq_l2(n))
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        // the clamp can sit within h of a boundary only with probability ~1e-5 per entry
        assert!(report.passed(), "seed {seed}: {:e}", report.max_rel_error());
    }
}

#[test]
fn backward_is_bitwise_deterministic() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut g = Graph::new();
        let a = g.variable(random(&mut rng, 6, 5, -1.0, 1.0));
        let b = g.variable(random(&mut rng, 5, 3, -1.0, 1.0));
        let m = g.matmul(a, b).unwrap();
        let s = g.softmax_rows(m);
        let p = g.offset(s, 1.0);
        let d = g.digamma(p).unwrap();
        let root = g.mean(d);
        let grads = g.backward(root).unwrap();
        (grads.get(a).unwrap().clone(), grads.get(b).unwrap().clone())
    };
    let (a1, b1) = build();
    let (a2, b2) = build();
    assert_eq!(a1.data(), a2.data());
    assert_eq!(b1.data(), b2.data());
}
