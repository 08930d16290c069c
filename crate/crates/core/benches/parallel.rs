use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kwsaug_core::audio::AudioBuffer;
use kwsaug_core::augment::{synth_rir, ReverberatedBank};
use kwsaug_core::corpus::{render_utterance, CorpusConfig};
use kwsaug_core::decoder::{build_kws_graph, viterbi_log_likelihoods, BackgroundLoop, HmmTopology};
use kwsaug_core::exec::{self, Execution};
use kwsaug_core::frontend::{compute_features, FeatureConfig};
use kwsaug_core::manifest::{Label, Split};
use kwsaug_core::seed::rng_from;
use rand::Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn utterances(n: usize) -> Vec<AudioBuffer> {
    let config = CorpusConfig::default();
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Keyword } else { Label::NonKeyword };
            render_utterance(&config, &format!("bench-{i:05}"), label, Split::Train).unwrap().1
        })
        .collect()
}

fn features(c: &mut Criterion) {
    let audio = utterances(32);
    let cfg = FeatureConfig::default();
    let mut g = c.benchmark_group("features");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec::map(mode, &audio, |a| compute_features(a, &cfg).unwrap()))
        });
    }
    g.finish();
}

fn reverberation(c: &mut Criterion) {
    let mut rng = rng_from(5);
    let clips: Vec<(String, AudioBuffer)> = (0..4)
        .map(|i| {
            let s = (0..16_000 * 5).map(|_| rng.random_range(-0.5..0.5)).collect();
            (format!("clip-{i}"), AudioBuffer::new(s, 16_000).unwrap())
        })
        .collect();
    let rirs: Vec<_> = (0..4).map(|i| synth_rir(0.4, 4000, i).unwrap()).collect();
    let mut g = c.benchmark_group("reverberated_bank");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| ReverberatedBank::build(&clips, &rirs, mode).unwrap())
        });
    }
    g.finish();
}

fn decoding(c: &mut Criterion) {
    let config = CorpusConfig::default();
    let inventory = config.phone_set.symbols();
    let topo = HmmTopology::new(3, 0.5).unwrap();
    let graph = build_kws_graph(&config.keyword, &inventory, &topo, &BackgroundLoop::default(), 0.0).unwrap();
    let mut rng = rng_from(9);
    let emissions: Vec<Vec<Vec<f64>>> = (0..64)
        .map(|_| {
            (0..200)
                .map(|_| (0..graph.num_states()).map(|_| -rng.random_range(0.0..8.0)).collect())
                .collect()
        })
        .collect();
    let mut g = c.benchmark_group("viterbi");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec::map(mode, &emissions, |e| viterbi_log_likelihoods(&graph, e).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, features, reverberation, decoding);
criterion_main!(benches);
