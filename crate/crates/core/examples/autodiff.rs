//! Build a small graph, differentiate it, and confirm the result with
//! central differences. Then run the per-loss gradient suite.
//!
//! cargo run --example autodiff

use trustmv::diffcore::{grad_check, Graph, Tensor};
use trustmv::pipeline::{gradient_suite, GRADCHECK_STEP, GRADCHECK_TOLERANCE};

fn main() -> trustmv::error::Result<()> {
    let x = Tensor::new(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.2, -0.3])?;
    let w = Tensor::new(3, 2, vec![0.1, 0.4, -0.2, 0.3, 0.7, -0.5])?;

    let mut g = Graph::new();
    let xv = g.variable(x.clone());
    let wv = g.variable(w.clone());
    let h = g.matmul(xv, wv)?;
    let p = g.softmax_rows(h);
    let lp = g.log(p)?;
    let loss = g.mean(lp);
    let grads = g.backward(loss)?;
    println!("loss = {:.6}", g.value(loss).item());
    println!("d loss / d w = {:?}", grads.get(wv).map(Tensor::data));

    let report = grad_check(
        |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let p = g.softmax_rows(h);
            let lp = g.log(p)?;
            Ok(g.mean(lp))
        },
        &[x, w],
        GRADCHECK_STEP,
        GRADCHECK_TOLERANCE,
    )?;
    println!(
        "finite-difference max relative error: {:.2e}",
        report.max_rel_error()
    );

    for row in gradient_suite(&[0, 1, 2, 3, 4])? {
        println!("{:<14} {:.2e}", row.name, row.max_rel_error);
    }
    Ok(())
}
