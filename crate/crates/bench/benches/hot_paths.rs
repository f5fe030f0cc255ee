use criterion::{criterion_group, criterion_main, Criterion};
use crossway_core::dynamics::Action;
use crossway_core::env::{Env, ScenarioSpec, SimParams};
use crossway_core::nn::{AdamState, Mlp};
use crossway_core::ppo::{collect_rollout, ppo_update, PpoHyper};
use crossway_core::road_net::{build_intersection, GeometryConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use std::sync::Arc;

fn make_env() -> Env {
    let net = Arc::new(build_intersection(&GeometryConfig::default()).unwrap());
    Env::new(net, SimParams::default(), String::new())
}

fn bench_env_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("env_step");
    for n_sv in [0u32, 8] {
        group.bench_function(format!("{n_sv}_surrounding"), |b| {
            let mut env = make_env();
            let mut seed = 0u64;
            env.reset_with_seed(ScenarioSpec::exact(n_sv), seed).unwrap();
            b.iter(|| {
                let out = env.step(Action::Keep).unwrap();
                if out.outcome.is_terminal() {
                    seed += 1;
                    env.reset_with_seed(ScenarioSpec::exact(n_sv), seed).unwrap();
                }
                black_box(out.occupancy)
            });
        });
    }
    group.finish();
}

fn bench_actor_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let actor = Mlp::new(54, 128, 5, &mut rng);
    let obs = vec![0.1; 54];
    c.bench_function("actor_forward_54x128x5", |b| {
        b.iter(|| black_box(actor.forward(black_box(&obs)).output[0]))
    });
}

fn bench_ppo_update(c: &mut Criterion) {
    let hyper = PpoHyper {
        rollout_steps: 256,
        minibatch_size: 64,
        epochs: 2,
        ..PpoHyper::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let actor0 = Mlp::new(54, 128, 5, &mut rng);
    let critic0 = Mlp::new(54, 64, 1, &mut rng);
    let mut env = make_env();
    let batch = collect_rollout(
        &mut env,
        &actor0,
        &critic0,
        &hyper,
        ScenarioSpec::exact(2),
        usize::MAX,
        &mut rng,
    )
    .unwrap();
    c.bench_function("ppo_update_256steps_2epochs", |b| {
        b.iter(|| {
            let mut actor = actor0.clone();
            let mut critic = critic0.clone();
            let mut aa = AdamState::new(&actor);
            let mut ac = AdamState::new(&critic);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            black_box(
                ppo_update(&mut actor, &mut critic, &mut aa, &mut ac, &batch, &hyper, 0.2, &mut rng)
                    .unwrap(),
            )
        })
    });
}

criterion_group!(benches, bench_env_step, bench_actor_forward, bench_ppo_update);
criterion_main!(benches);
