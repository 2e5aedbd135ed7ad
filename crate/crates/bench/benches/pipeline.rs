use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use firstreply_bench::{matching_pool, reply_texts, word_counts};
use firstreply_core::cohort::{greedy_match, pooled_covariance, spd_inverse};
use firstreply_core::lexicon::{fit_sage, SageConfig};
use firstreply_core::scoring::{SentimentAnalyzer, StubScorer};
use firstreply_core::simulate::{simulate_growth, Scenario};
use firstreply_core::stats::{engagement_data, fit_engagement_model, AttributeMode, MixedConfig, Sigma2};
use firstreply_core::synth::{model_events, ModelDesign};
use firstreply_core::{CommunityType, PostKind, SentimentLexicon};

fn sage(c: &mut Criterion) {
    let (target, background) = word_counts(1, 5_000);
    let mut group = c.benchmark_group("sage");
    group.sample_size(10);
    group.bench_function("5k_words", |b| {
        b.iter(|| fit_sage(black_box(&target), black_box(&background), &SageConfig::default()).unwrap())
    });
    group.finish();
}

fn matching(c: &mut Criterion) {
    let (treated, control) = matching_pool(2, 2_000, 6_000, 0.5);
    let pooled: Vec<Vec<f64>> = treated.iter().chain(&control).cloned().collect();
    let inv = spd_inverse(&pooled_covariance(&pooled).unwrap()).unwrap();
    let ids: Vec<String> = (0..control.len()).map(|i| format!("c{i:05}")).collect();
    let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let order: Vec<usize> = (0..treated.len()).collect();
    c.bench_function("greedy_match_2k_x_6k", |b| {
        b.iter(|| greedy_match(black_box(&treated), &control, &id_refs, &inv, &order).unwrap())
    });
}

fn scoring(c: &mut Criterion) {
    let texts = reply_texts(3, 1_000);
    let analyzer = SentimentAnalyzer::new(&SentimentLexicon::builtin());
    let stub = StubScorer::default();
    c.bench_function("sentiment_1k_replies", |b| {
        b.iter(|| texts.iter().map(|t| analyzer.score(black_box(t))).sum::<f64>())
    });
    c.bench_function("stub_attributes_1k_replies", |b| {
        b.iter(|| texts.iter().map(|t| stub.scores(black_box(t)).toxicity).sum::<f64>())
    });
}

fn models(c: &mut Criterion) {
    let design = ModelDesign { groups: 10, users_per_group: 2_000, ..ModelDesign::published(4) };
    let (events, _) = model_events(&design).unwrap();
    let mut group = c.benchmark_group("mixed_model");
    group.sample_size(10);
    group.bench_function("estimated_sigma2_20k_events", |b| {
        b.iter(|| {
            fit_engagement_model(
                black_box(&events),
                PostKind::Comment,
                CommunityType::Hateful,
                AttributeMode::Continuous,
                &MixedConfig::default(),
            )
            .unwrap()
        })
    });
    group.bench_function("fixed_sigma2_20k_events", |b| {
        let cfg = MixedConfig { sigma2: Sigma2::Fixed(0.16), ..Default::default() };
        b.iter(|| {
            fit_engagement_model(black_box(&events), PostKind::Comment, CommunityType::Hateful, AttributeMode::Continuous, &cfg)
                .unwrap()
        })
    });
    group.bench_function("design_matrix_20k_events", |b| {
        b.iter_batched(|| events.clone(), |ev| engagement_data(&ev, AttributeMode::Continuous), BatchSize::LargeInput)
    });
    group.finish();

    let model = fit_engagement_model(
        &events,
        PostKind::Comment,
        CommunityType::Hateful,
        AttributeMode::Continuous,
        &MixedConfig::default(),
    )
    .unwrap();
    let community: Vec<_> = events.iter().filter(|e| e.community == "group00").cloned().collect();
    let models = [model];
    c.bench_function("growth_curve_2k_newcomers", |b| {
        b.iter(|| simulate_growth(&models, black_box(&community), Scenario::Nicer, 7).unwrap())
    });
}

criterion_group!(benches, sage, matching, scoring, models);
criterion_main!(benches);
