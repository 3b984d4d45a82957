//! Compares the hand-derived gradients of the three loss terms with central
//! finite differences on a random instance.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use desclip::objective::{instance_matching_loss, ric_loss, text_alignment_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn fd(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let (mut p, mut m) = (x.to_vec(), x.to_vec());
            p[k] += H;
            m[k] -= H;
            (f(&p) - f(&m)) / (2.0 * H)
        })
        .collect()
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    n(&d) / n(a).max(n(b)).max(1e-300)
}

fn rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn main() -> desclip::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (dim, n) = (6, 4);
    let zs = rows(&mut rng, n, dim);
    let hs = rows(&mut rng, n, dim);
    let unflatten = |x: &[f64]| x.chunks(dim).map(<[f64]>::to_vec).collect::<Vec<_>>();

    let tau_tilde = 0.1;
    let (loss, g) = instance_matching_loss(&zs, &hs, tau_tilde)?;
    let num = fd(&zs.concat(), |x| instance_matching_loss(&unflatten(x), &hs, tau_tilde).unwrap().0);
    println!("IM   loss {loss:.6}  rel err {:.2e}", rel(&g.concat(), &num));

    let (alpha, beta) = (0.1, 1.0);
    let w = &hs[0];
    let s = vec![0.05; dim];
    let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cal = |s: &[f64]| w.iter().zip(s).map(|(a, b)| a / wn + alpha * b).collect::<Vec<_>>();
    let (loss, g) = text_alignment_loss(&cal(&s), &zs, beta, alpha)?;
    let num = fd(&s, |x| text_alignment_loss(&cal(x), &zs, beta, alpha).unwrap().0);
    println!("TA   loss {loss:.6}  rel err {:.2e}", rel(&g, &num));

    let tau = 0.1;
    let labels = [0, 1, 2, 1];
    let (loss, g) = ric_loss(&zs, &labels, &hs[..3], tau, alpha)?;
    let num = fd(&zs.concat(), |x| ric_loss(&unflatten(x), &labels, &hs[..3], tau, alpha).unwrap().0);
    println!("RIC  loss {loss:.6}  rel err {:.2e} (features)", rel(&g.features.concat(), &num));
    Ok(())
}
