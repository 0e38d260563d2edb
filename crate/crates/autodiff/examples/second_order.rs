//! Differentiates through a gradient step: the outer gradient of
//! `L(x - ε∇L(x))` for `L(x) = ½‖Ax − b‖²`, next to its closed form.
//!
//! ```text
//! cargo run --example second_order
//! ```

use composer_autodiff::{GradMode, Graph, Result, Tensor};

fn loss(a: &Tensor<f64>, b: &Tensor<f64>, x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let r = a.matmul(x)?.sub(b)?;
    r.mul(&r)?.sum_all()?.scale(0.5)
}

fn main() -> Result<()> {
    let a = Tensor::from_vec(&[3, 2], vec![1.0, 0.5, -0.3, 2.0, 0.7, -1.1])?;
    let b = Tensor::from_vec(&[3, 1], vec![0.2, -0.4, 1.0])?;
    let eps = 0.1;

    let g = Graph::new();
    let x = g.leaf(&Tensor::from_vec(&[2, 1], vec![0.3, -0.8])?);
    let inner = loss(&a, &b, &x)?;
    let grad = g.grad(&inner, &[&x], GradMode::CreateGraph)?.remove(0);
    let stepped = x.sub(&grad.scale(eps)?)?;
    let outer = loss(&a, &b, &stepped)?;
    let through = g.grad(&outer, &[&x], GradMode::Detached)?.remove(0);

    // (I - εAᵀA) Aᵀ(A x' - b), with x' the stepped point
    let ata = a.matmul_t(true, &a, false)?;
    let residual = a.matmul(&stepped.detach())?.sub(&b)?;
    let outer_grad = a.matmul_t(true, &residual, false)?;
    let closed = outer_grad.sub(&ata.matmul(&outer_grad)?.scale(eps)?)?;

    println!("inner loss {:.6}, outer loss {:.6}", inner.item()?, outer.item()?);
    println!("autodiff    {:?}", through.to_vec());
    println!("closed form {:?}", closed.to_vec());
    Ok(())
}
