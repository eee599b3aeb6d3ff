//! Helpers shared by integration test targets.

use misalign_core::mmcl::{info_nce_loss, info_nce_on_tape, Similarity};
use misalign_core::numerics::{Activation, Matrix, Mlp, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const H: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;
/// Central differences carry roundoff of about `ε·|L| / H ≈ 1e-12·|L|`, so
/// below this magnitude their relative error says nothing about the tape.
/// Such entries must instead agree absolutely to `ABS_TOL`.
pub const ABS_FLOOR: f64 = 1e-7;
pub const ABS_TOL: f64 = 1e-10;

struct Case {
    f: Mlp,
    g: Mlp,
    x: Matrix,
    t: Matrix,
    tau: f64,
    sim: Similarity,
}

fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let smooth = [Activation::Tanh, Activation::Sigmoid];
    let net = |input: usize, out: usize, rng: &mut ChaCha8Rng| {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![input];
        sizes.extend((0..depth).map(|_| rng.random_range(2..=6)));
        sizes.push(out);
        let hidden = smooth[rng.random_range(0..2)];
        let output = [Activation::Identity, Activation::Tanh][rng.random_range(0..2)];
        Mlp::new(&sizes, hidden, output, rng)
    };
    let out = rng.random_range(1..=4);
    let (dx, dt) = (rng.random_range(1..=5), rng.random_range(1..=5));
    let f = net(dx, out, &mut rng);
    let g = net(dt, out, &mut rng);
    let k = rng.random_range(2..=6);
    let x = Matrix::from_fn(k, dx, |_, _| rng.sample(StandardNormal));
    let t = Matrix::from_fn(k, dt, |_, _| rng.sample(StandardNormal));
    let sim = [Similarity::NegSqEuclidean, Similarity::NegEuclidean, Similarity::Cosine][rng.random_range(0..3)];
    Case {
        f,
        g,
        x,
        t,
        tau: rng.random_range(0.3..2.0),
        sim,
    }
}

fn loss(c: &Case, f: &Mlp, g: &Mlp) -> f64 {
    info_nce_loss(&f.forward(&c.x), &g.forward(&c.t), c.tau, c.sim).unwrap()
}

/// Largest element-wise relative error between tape gradients and central
/// differences for the random two-encoder InfoNCE graph drawn from `seed`;
/// infinite if a sub-floor entry disagrees absolutely.
pub fn fd_check(seed: u64) -> f64 {
    let c = random_case(seed);
    let mut tape = Tape::new();
    let xv = tape.constant(c.x.clone());
    let tv = tape.constant(c.t.clone());
    let (zx, px) = c.f.forward_on_tape(&mut tape, xv);
    let (zt, pt) = c.g.forward_on_tape(&mut tape, tv);
    let l = info_nce_on_tape(&mut tape, zx, zt, c.tau, c.sim).unwrap();
    let grads = tape.backward(l).unwrap();

    let mut worst = 0.0f64;
    for side in 0..2 {
        let vars = if side == 0 { &px } else { &pt };
        for (p, &var) in vars.iter().enumerate() {
            let analytic = grads.wrt(&tape, var);
            for i in 0..analytic.len() {
                let probe = |delta: f64| {
                    let (mut f, mut g) = (c.f.clone(), c.g.clone());
                    let net = if side == 0 { &mut f } else { &mut g };
                    net.params_mut()[p].as_mut_slice()[i] += delta;
                    loss(&c, &f, &g)
                };
                let fd = (probe(H) - probe(-H)) / (2.0 * H);
                let a = analytic.as_slice()[i];
                let err = (a - fd).abs();
                let scale = a.abs().max(fd.abs());
                if scale > ABS_FLOOR {
                    worst = worst.max(err / scale);
                } else if err > ABS_TOL {
                    return f64::INFINITY;
                }
            }
        }
    }
    worst
}

