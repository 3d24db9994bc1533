use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use springmor::dynamics::rollout;
use springmor::reduction::galerkin_project;
use springmor::{DynamicState, SystemMatrices};
use springmor_bench::{hierarchy, rope};

const FRAMES: usize = 10;

fn rollout_per_level(c: &mut Criterion) {
    let (out, obs) = rope(200, FRAMES, 667);
    let model = hierarchy(&out, &obs);
    let mut group = c.benchmark_group("rollout_10_frames");
    group.sample_size(10);
    for level in 0..=model.levels() {
        let (graph, params, script) = model.level_system(&out.scene, &out.script, level).expect("level");
        let z0 = DynamicState::at_rest(graph.positions0.clone());
        group.bench_with_input(BenchmarkId::new("level", graph.node_count()), &level, |b, _| {
            b.iter(|| rollout(&z0, &script, &graph, &params, &out.scene.config, FRAMES).expect("rollout"))
        });
    }
    group.finish();
}

fn projection(c: &mut Criterion) {
    let (out, obs) = rope(500, 10, 667);
    let model = hierarchy(&out, &obs);
    let sys = SystemMatrices::assemble(&out.scene.graph, &out.truth).expect("assemble");
    c.bench_function("galerkin_project_500", |b| b.iter(|| galerkin_project(&sys, &model.assignments[0]).expect("project")));
}

criterion_group!(benches, rollout_per_level, projection);
criterion_main!(benches);
