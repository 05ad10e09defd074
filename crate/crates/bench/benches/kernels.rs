use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reskill::agent::{GaussianPolicy, PolicySpec};
use reskill::autodiff::{Tape, Tensor};
use reskill::dataset::{NormStats, SkillSegment};
use reskill::env::{Env, EnvConfig, TaskId, OBS_DIM};
use reskill::skills::{SegmentBatch, SkillConfig, SkillModel};
use std::hint::black_box;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_tensor(&mut rng, 256, 128);
    let b = random_tensor(&mut rng, 128, 128);
    c.bench_function("matmul_256x128x128_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let x = tape.constant_ref(&a);
            let w = tape.param_ref(&b);
            let y = tape.matmul(x, w).unwrap();
            let s = tape.sum(y);
            black_box(tape.backward(s).unwrap());
        })
    });
}

fn env_step(c: &mut Criterion) {
    let cfg = EnvConfig::default();
    for task in [TaskId::SlipperyPush, TaskId::TableCleanup] {
        let (mut env, _) = Env::reset(cfg.task(task), cfg.physics.clone(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        c.bench_function(&format!("env_step_{}", task.name()), |bench| {
            bench.iter(|| {
                let a = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let r = env.step(&a).unwrap();
                if r.done {
                    env = Env::reset(cfg.task(task), cfg.physics.clone(), rng.random()).0;
                }
                black_box(r.reward)
            })
        });
    }
}

fn model() -> SkillModel {
    SkillModel::new(SkillConfig::default(), NormStats::identity(), "bench").unwrap()
}

fn flow(c: &mut Criterion) {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = random_tensor(&mut rng, 256, m.z_dim());
    let s = random_tensor(&mut rng, 256, OBS_DIM);
    c.bench_function("flow_forward_256", |bench| bench.iter(|| black_box(m.flow.forward_batch(&z, &s).unwrap())));
    c.bench_function("flow_inverse_256", |bench| bench.iter(|| black_box(m.flow.inverse_batch(&z, &s).unwrap())));
}

fn vae_loss(c: &mut Criterion) {
    let m = model();
    let h = m.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let segments: Vec<SkillSegment> = (0..128)
        .map(|i| SkillSegment {
            states: (0..h).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(),
            actions: (0..h).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(),
            trajectory: i,
            start: 0,
        })
        .collect();
    let refs: Vec<&SkillSegment> = segments.iter().collect();
    let batch = SegmentBatch::new(&refs, &m.stats, h).unwrap();
    let eps = random_tensor(&mut rng, refs.len(), m.z_dim());
    c.bench_function("vae_loss_grad_batch128", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let p = m.vae.params.bind(&mut tape);
            let terms = m.vae.loss_tape(&mut tape, &p, &batch, &eps, 1e-2).unwrap();
            black_box(tape.backward(terms.loss).unwrap());
        })
    });
}

fn policy_sample(c: &mut Criterion) {
    let policy = GaussianPolicy::new(OBS_DIM, 4, &PolicySpec::default(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..OBS_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("policy_sample", |bench| bench.iter(|| black_box(policy.sample(&x, &mut rng).unwrap())));
}

criterion_group!(benches, matmul, env_step, flow, vae_loss, policy_sample);
criterion_main!(benches);
