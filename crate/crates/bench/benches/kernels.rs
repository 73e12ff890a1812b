use criterion::{black_box, criterion_group, criterion_main, Criterion};
use deepair::numerics::{lstm_step, LstmVars, Rng};
use deepair::{Tape, Tensor};

fn tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let x = tensor(&mut rng, &[32, 16, 9, 9]);
    let k3 = tensor(&mut rng, &[16, 16, 3, 3]);
    let k1 = tensor(&mut rng, &[16, 16]);
    let b = tensor(&mut rng, &[16]);
    c.bench_function("conv2d 3x3 32x16x9x9", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let (xv, kv, bv) = (t.constant(x.clone()), t.constant(k3.clone()), t.constant(b.clone()));
            black_box(t.conv2d(xv, kv, bv).unwrap())
        })
    });
    c.bench_function("conv2d 3x3 forward+backward", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let (xv, kv, bv) = (t.leaf(x.clone(), true), t.leaf(k3.clone(), true), t.leaf(b.clone(), true));
            let y = t.conv2d(xv, kv, bv).unwrap();
            let s = t.sum(y);
            black_box(t.backward(s).unwrap())
        })
    });
    c.bench_function("conv1x1 32x16x9x9", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let (xv, kv, bv) = (t.constant(x.clone()), t.constant(k1.clone()), t.constant(b.clone()));
            black_box(t.conv1x1(xv, kv, bv).unwrap())
        })
    });
}

fn lstm(c: &mut Criterion) {
    let mut rng = Rng::new(2);
    let (d, h) = (16, 64);
    let w: [Tensor; 4] = std::array::from_fn(|_| tensor(&mut rng, &[h, d]));
    let u: [Tensor; 4] = std::array::from_fn(|_| tensor(&mut rng, &[h, h]));
    let b: [Tensor; 4] = std::array::from_fn(|_| tensor(&mut rng, &[h]));
    let x = tensor(&mut rng, &[d]);
    c.bench_function("lstm_step 8 steps d16 h64", |bench| {
        bench.iter(|| {
            let mut t = Tape::new();
            let p = LstmVars {
                w: std::array::from_fn(|k| t.constant(w[k].clone())),
                u: std::array::from_fn(|k| t.constant(u[k].clone())),
                b: std::array::from_fn(|k| t.constant(b[k].clone())),
            };
            let xv = t.constant(x.clone());
            let mut hs = t.constant(Tensor::zeros(&[h]));
            let mut cs = t.constant(Tensor::zeros(&[h]));
            for _ in 0..8 {
                (hs, cs) = lstm_step(&mut t, xv, hs, cs, &p).unwrap();
            }
            black_box(hs)
        })
    });
}

criterion_group!(benches, conv, lstm);
criterion_main!(benches);
