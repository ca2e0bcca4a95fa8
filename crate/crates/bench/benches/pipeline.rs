use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use vlgrid_core::dataset::{generate_split, DatasetSpec, SplitName, SplitSizes};
use vlgrid_core::evalkit::{score, Convergence, PredictionSet};
use vlgrid_core::render::{render_scene, RenderConfig};
use vlgrid_core::rng::substream;
use vlgrid_core::splitter::{sample_example, SamplerConfig, Side};
use vlgrid_core::textgen::{parse_caption, render_caption};
use vlgrid_core::{eval, Task, TaskPartition};

fn sampling(c: &mut Criterion) {
    let cfg = SamplerConfig::default();
    let mut group = c.benchmark_group("sample_example");
    for task in Task::ALL {
        let partition = TaskPartition::build(task, 0.2, 1, &cfg).unwrap();
        let mut i = 0u64;
        group.bench_function(task.name(), |b| {
            b.iter(|| {
                i += 1;
                let mut rng = substream(1, &["bench"], i);
                sample_example(&partition, Side::Train, i.is_multiple_of(2), &cfg, &mut rng).unwrap()
            })
        });
    }
    group.finish();
}

fn per_record(c: &mut Criterion) {
    let cfg = SamplerConfig::default();
    let partition = TaskPartition::build(Task::Quantifiers, 0.2, 1, &cfg).unwrap();
    let examples: Vec<_> = (0..256)
        .map(|i| {
            sample_example(
                &partition,
                Side::Train,
                i % 2 == 0,
                &cfg,
                &mut substream(2, &["bench"], i),
            )
            .unwrap()
        })
        .collect();
    let render = RenderConfig::default();

    c.bench_function("eval", |b| {
        b.iter(|| examples.iter().filter(|e| eval(&e.scene, &e.query).unwrap()).count())
    });
    c.bench_function("caption_round_trip", |b| {
        b.iter(|| {
            for e in &examples[..32] {
                black_box(parse_caption(&render_caption(&e.scene)).unwrap());
            }
        })
    });
    c.bench_function("render_png", |b| {
        let mut k = 0;
        b.iter(|| {
            k = (k + 1) % examples.len();
            render_scene(&examples[k].scene, &render).unwrap()
        })
    });
}

fn splits(c: &mut Criterion) {
    let spec = DatasetSpec {
        sizes: SplitSizes {
            train: 1000,
            val: 1,
            ind_test: 1,
            ood_test: 1,
        },
        ..DatasetSpec::new(Task::Comparison, 3)
    };
    let partition = TaskPartition::build(spec.task, spec.holdout_fraction, spec.seed, &spec.sampler).unwrap();
    let mut group = c.benchmark_group("split");
    group.sample_size(10);
    group.bench_function("generate_1000_comparison", |b| {
        b.iter(|| generate_split(&spec, &partition, SplitName::Train).unwrap())
    });
    let records = generate_split(&spec, &partition, SplitName::Train).unwrap();
    group.bench_function("score_1000", |b| {
        b.iter_batched(
            || PredictionSet::from_pairs(records.iter().map(|r| (r.id.clone(), r.label))),
            |preds| score(&preds, &records, Convergence::default()).unwrap(),
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

criterion_group!(benches, sampling, per_record, splits);
criterion_main!(benches);
