//! Central-difference gradient checks over candle variables in f64.

use candle_core::{DType, Device, Tensor, Var};
use motionboost::nn::{bce_loss, cls_loss, total_loss, Mqpm, NetworkConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

pub fn scalar(t: &Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

pub fn binary_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n)
        .map(|_| f64::from(u8::from(rng.random_bool(0.4))))
        .collect();
    Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
}

/// Autograd gradient and central differences of `f` for every element of
/// `var`.
pub fn gradient_pairs(var: &Var, analytic: &Tensor, f: &dyn Fn() -> f64) -> (Vec<f64>, Vec<f64>) {
    let base = var
        .as_tensor()
        .flatten_all()
        .unwrap()
        .to_vec1::<f64>()
        .unwrap();
    let grad = analytic.flatten_all().unwrap().to_vec1::<f64>().unwrap();
    let shape = var.dims().to_vec();
    let set = |v: Vec<f64>| {
        var.set(&Tensor::from_vec(v, shape.as_slice(), &Device::Cpu).unwrap())
            .unwrap()
    };
    let mut numeric = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut v = base.clone();
        v[i] = base[i] + H;
        set(v.clone());
        let up = f();
        v[i] = base[i] - H;
        set(v);
        let down = f();
        numeric.push((up - down) / (2.0 * H));
    }
    set(base);
    (grad, numeric)
}

/// Largest element-wise relative error.
pub fn max_rel_error(var: &Var, analytic: &Tensor, f: &dyn Fn() -> f64) -> f64 {
    let (a, n) = gradient_pairs(var, analytic, f);
    a.iter()
        .zip(&n)
        .map(|(x, y)| rel_err(*x, *y))
        .fold(0.0, f64::max)
}

/// `|a − n| / max(|a|, |n|)` over the whole gradient vector.
pub fn norm_rel_error(var: &Var, analytic: &Tensor, f: &dyn Fn() -> f64) -> f64 {
    let (a, n) = gradient_pairs(var, analytic, f);
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(&n).map(|(x, y)| x - y));
    diff / norm(&mut a.iter().copied())
        .max(norm(&mut n.iter().copied()))
        .max(1e-12)
}

/// Worst error over the pixel loss, the classification loss and their sum,
/// each checked against its own inputs.
pub fn loss_check(seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ms = Var::from_tensor(&random_tensor(&mut rng, &[2, 1, 4, 4], 0.05, 0.95)).unwrap();
    let gt = binary_tensor(&mut rng, &[2, 1, 4, 4]);
    let q = Var::from_tensor(&random_tensor(&mut rng, &[3], 0.05, 0.95)).unwrap();
    let labels = Tensor::new(&[1.0f64, 0.0, 1.0], &Device::Cpu).unwrap();

    let bce = || bce_loss(ms.as_tensor(), &gt).unwrap();
    let cls = || cls_loss(q.as_tensor(), &labels).unwrap();
    let total = || total_loss(&bce(), &cls()).unwrap();

    let g = bce().backward().unwrap();
    let e_bce = max_rel_error(&ms, g.get(ms.as_tensor()).unwrap(), &|| scalar(&bce()));
    let g = cls().backward().unwrap();
    let e_cls = max_rel_error(&q, g.get(q.as_tensor()).unwrap(), &|| scalar(&cls()));
    let g = total().backward().unwrap();
    let e_total = max_rel_error(&ms, g.get(ms.as_tensor()).unwrap(), &|| scalar(&total())).max(
        max_rel_error(&q, g.get(q.as_tensor()).unwrap(), &|| scalar(&total())),
    );
    [e_bce, e_cls, e_total]
}

/// Worst norm-wise error of the joint loss with respect to parameter
/// tensors of a tiny f64 network, both branches included.
pub fn network_check(seed: u64) -> f64 {
    let config = NetworkConfig {
        input_size: [32, 32],
        base_channels: 2,
        decoder_channels: vec![4, 4, 3],
        ..NetworkConfig::default()
    };
    let model = Mqpm::build(&config, seed, DType::F64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let x = random_tensor(&mut rng, &[2, 3, 32, 32], 0.0, 1.0);
    let gt = binary_tensor(&mut rng, &[2, 1, 32, 32]);
    let labels = Tensor::new(&[1.0f64, 0.0], &Device::Cpu).unwrap();
    let loss = || {
        let (ms, q) = model.forward(&x).unwrap();
        total_loss(
            &bce_loss(&ms, &gt).unwrap(),
            &cls_loss(&q, &labels).unwrap(),
        )
        .unwrap()
    };
    let grads = loss().backward().unwrap();
    let mut worst: f64 = 0.0;
    for name in [
        "cls.weight",
        "cls.bias",
        "decoder.head.bias",
        "decoder.head.weight",
        "decoder.block2.conv1.weight",
        "decoder.block0.conv0.bias",
        "attention0.fuse.weight",
        "encoder.stage4.conv2.bias",
    ] {
        let var = model.params.get(name).unwrap();
        worst = worst.max(norm_rel_error(
            var,
            grads.get(var.as_tensor()).unwrap(),
            &|| scalar(&loss()),
        ));
    }
    worst
}
