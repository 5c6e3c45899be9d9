//! Training pipeline and oracle-checked benchmark reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::protocol::{entity_rng, Deployment, DeploymentConfig, EntityId, SessionCounters, SessionId};
use crate::tree::{accuracy, complete_pad, train_cart, CompleteTree, Dataset, Quantizer};

pub const REPORT_SCHEMA: &str = "onepath-bench/v1";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub rows: usize,
    pub n: usize,
    pub trained_depth: u32,
    pub padded_depth: u32,
    pub real_nodes: usize,
    pub training_accuracy: f64,
    /// Accuracy of the padded, quantized tree on the quantized rows.
    pub quantized_accuracy: f64,
}

/// CART training, quantization to `feature_bits` and padding to a complete tree.
pub fn train_model(data: &Dataset, depth: u32, feature_bits: u32) -> Result<(CompleteTree, TrainSummary)> {
    let plain = train_cart(data, depth)?;
    let quantizer = Quantizer::fit(&data.rows, feature_bits)?;
    let quantized = quantizer.quantize_tree(&plain)?;
    let tree = complete_pad(&quantized, depth, feature_bits)?;
    let mut agree = 0usize;
    for (row, label) in data.rows.iter().zip(&data.labels) {
        let x = quantizer.quantize_vector(row)?;
        if crate::tree::plaintext_infer(&tree, &x).0 == label {
            agree += 1;
        }
    }
    let summary = TrainSummary {
        rows: data.len(),
        n: data.n(),
        trained_depth: plain.depth(),
        padded_depth: depth,
        real_nodes: tree.nodes().iter().filter(|n| !n.dummy).count(),
        training_accuracy: accuracy(&plain, data),
        quantized_accuracy: agree as f64 / data.len() as f64,
    };
    Ok((tree.with_quantizer(quantizer)?, summary))
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub name: String,
    pub repetitions: usize,
    /// Sessions submitted together before the network runs.
    pub jobs: usize,
    pub seed: u64,
    pub audit: bool,
    pub deployment: DeploymentConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            name: "bench".into(),
            repetitions: 10,
            jobs: 1,
            seed: 0,
            audit: true,
            deployment: DeploymentConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeBytes {
    pub from: String,
    pub to: String,
    pub bytes: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Agreement {
    pub checked: usize,
    pub agreed: usize,
    /// `None` for a prepare-only report.
    pub rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OnePath {
    pub sine_evaluations_per_query: u64,
    pub fe_decryptions_per_query: u64,
    pub subtree_nodes_sent_per_query: u64,
    pub expected_subtree_nodes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub schema: &'static str,
    pub dataset: String,
    pub depth: u32,
    pub n: usize,
    pub internal_nodes: u32,
    pub repetitions: usize,
    pub jobs: usize,
    pub seed: u64,
    pub security_bits: u32,
    pub ring_bits: u32,
    pub feature_bits: u32,
    pub window: u64,
    pub training: Option<TrainSummary>,
    /// Compute time per entity during key generation, preparation and provisioning.
    pub setup_ms: BTreeMap<String, f64>,
    /// Mean compute time per entity per query; "servers" sums both servers.
    pub query_ms: BTreeMap<String, f64>,
    pub setup_bytes: Vec<EdgeBytes>,
    /// Mean bytes per edge per query.
    pub query_bytes: Vec<EdgeBytes>,
    pub query_bytes_total: f64,
    pub query_kb_total: f64,
    pub one_path: Option<OnePath>,
    pub agreement: Agreement,
    pub audits_passed: usize,
    pub counters: Vec<SessionCounters>,
    pub transcript_digest: String,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Table in the shape of the usual per-dataset cost table.
    pub fn to_table(&self) -> String {
        let ms = |map: &BTreeMap<String, f64>, k: &str| map.get(k).copied().unwrap_or(0.0);
        let mut out = String::new();
        writeln!(
            out,
            "{:<16} {:>3} {:>3} | {:>10} {:>10} {:>10} {:>10} | {:>12}",
            "dataset", "d", "n", "DU ms", "KGC ms", "MP ms", "CS ms", "comm KB"
        )
        .unwrap();
        writeln!(
            out,
            "{:<16} {:>3} {:>3} | {:>10.3} {:>10.3} {:>10.3} {:>10.3} | {:>12.3}",
            self.dataset,
            self.depth,
            self.n,
            ms(&self.query_ms, "DU"),
            ms(&self.query_ms, "KGC"),
            ms(&self.setup_ms, "MP"),
            ms(&self.query_ms, "servers"),
            self.query_kb_total
        )
        .unwrap();
        if let Some(p) = &self.one_path {
            writeln!(
                out,
                "one path: {} evaluations, {} FE decryptions, {} node records sent (expected {})",
                p.sine_evaluations_per_query,
                p.fe_decryptions_per_query,
                p.subtree_nodes_sent_per_query,
                p.expected_subtree_nodes
            )
            .unwrap();
        }
        match self.agreement.rate {
            Some(rate) => writeln!(
                out,
                "oracle agreement: {}/{} ({:.1}%), audits passed: {}",
                self.agreement.agreed,
                self.agreement.checked,
                rate * 100.0,
                self.audits_passed
            )
            .unwrap(),
            None => writeln!(out, "prepare-only run: no queries").unwrap(),
        }
        out
    }
}

/// Trains on `data`, then benchmarks queries drawn from its rows.
pub fn bench_dataset(data: &Dataset, depth: u32, config: &BenchConfig) -> Result<BenchReport> {
    let (tree, summary) = train_model(data, depth, config.deployment.params.feature_bits)?;
    let quantizer = tree.quantizer.clone().expect("trained trees carry a quantizer");
    let mut rng = entity_rng(config.seed, EntityId::Du);
    let inputs = (0..config.repetitions)
        .map(|_| quantizer.quantize_vector(&data.rows[rng.gen_range(0..data.len())]))
        .collect::<Result<Vec<_>>>()?;
    let mut report = bench_tree(tree, &inputs, config)?;
    report.training = Some(summary);
    Ok(report)
}

/// Benchmarks one query per input; any oracle or audit failure aborts.
pub fn bench_tree(tree: CompleteTree, inputs: &[Vec<u64>], config: &BenchConfig) -> Result<BenchReport> {
    let depth = tree.depth();
    let n = tree.n();
    let gamma = tree.gamma();
    let started = Instant::now();
    let mut dep = Deployment::setup(tree, &config.deployment, config.seed)?;
    log::info!("setup for d={depth}, n={n} took {:?}", started.elapsed());
    let setup_ns = dep.transcript().compute_ns().clone();

    let mut counters = Vec::with_capacity(inputs.len());
    let mut agreed = 0usize;
    let mut audits = 0usize;
    for batch in inputs.chunks(config.jobs.max(1)) {
        let before = dep.entities().cs2.stored_records();
        let sessions: Vec<SessionId> = batch.iter().map(|x| dep.submit(x)).collect::<Result<_>>()?;
        dep.run()?;
        for (session, x) in sessions.into_iter().zip(batch) {
            let outcome = dep.outcome(session, x, before)?;
            dep.verify(&outcome, x)?;
            agreed += 1;
            if config.audit {
                dep.audit(&outcome)?.into_result()?;
                audits += 1;
            }
            counters.push(outcome.counters);
        }
    }

    let reps = inputs.len();
    let per = |v: f64| if reps == 0 { 0.0 } else { v / reps as f64 };
    let to_ms = |ns: u64| ns as f64 / 1e6;
    let mut setup_ms = BTreeMap::new();
    let mut query_ms = BTreeMap::new();
    for id in EntityId::ALL {
        let setup = setup_ns.get(&id).copied().unwrap_or(0);
        let total = dep.transcript().compute_ns().get(&id).copied().unwrap_or(0);
        setup_ms.insert(id.name().to_owned(), to_ms(setup));
        query_ms.insert(id.name().to_owned(), per(to_ms(total - setup)));
    }
    let servers = query_ms["CS1"] + query_ms["CS2"];
    query_ms.insert("servers".into(), servers);

    let edges = |session: Option<SessionId>, scale: f64| -> Vec<EdgeBytes> {
        let mut map: BTreeMap<(EntityId, EntityId), u64> = BTreeMap::new();
        for e in dep.transcript().entries() {
            let wanted = match session {
                Some(s) => e.session == s,
                None => e.session != SessionId::SETUP,
            };
            if wanted {
                *map.entry((e.from, e.to)).or_default() += e.bytes as u64;
            }
        }
        map.into_iter()
            .map(|((from, to), bytes)| EdgeBytes { from: from.name().into(), to: to.name().into(), bytes: bytes as f64 * scale })
            .collect()
    };
    let setup_bytes = edges(Some(SessionId::SETUP), 1.0);
    let query_bytes = if reps == 0 { vec![] } else { edges(None, 1.0 / reps as f64) };
    let query_bytes_total = query_bytes.iter().fold(0.0, |acc, e| acc + e.bytes);

    let one_path = counters.first().map(|c| OnePath {
        sine_evaluations_per_query: c.sine_evaluations,
        fe_decryptions_per_query: c.fe_decryptions,
        subtree_nodes_sent_per_query: c.subtree_nodes_sent,
        expected_subtree_nodes: (1u64 << (depth + 1)) - 2 - depth as u64,
    });
    if counters.iter().any(|c| Some(c.subtree_nodes_sent) != one_path.as_ref().map(|p| p.expected_subtree_nodes)) {
        return Err(Error::OracleMismatch("subtree node count differs between queries".into()));
    }

    let params = dep.params();
    Ok(BenchReport {
        schema: REPORT_SCHEMA,
        dataset: config.name.clone(),
        depth,
        n,
        internal_nodes: gamma,
        repetitions: reps,
        jobs: config.jobs.max(1),
        seed: config.seed,
        security_bits: dep.group().params().security_bits,
        ring_bits: params.ring.bits(),
        feature_bits: params.feature_bits,
        window: params.window(),
        training: None,
        setup_ms,
        query_ms,
        setup_bytes,
        query_bytes,
        query_bytes_total,
        query_kb_total: query_bytes_total / 1024.0,
        one_path,
        agreement: Agreement { checked: reps, agreed, rate: (reps > 0).then(|| agreed as f64 / reps as f64) },
        audits_passed: audits,
        counters,
        transcript_digest: dep.transcript().canonical_digest(),
    })
}
