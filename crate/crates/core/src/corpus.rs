//! Synthetic evolving corpus with a change ledger.
//!
//! Every paragraph carries a hidden identity. The ledger's expected change
//! classification is derived from identities, not from hashes, so it serves
//! as an independent oracle for change detection. Mutation plans that would
//! make identity and position disagree (an edited paragraph that also
//! shifts, or a fresh paragraph landing on a deleted one's slot) are
//! resampled.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chunking::RawDocument;
use crate::clock::TimestampMs;
use crate::error::{Error, Result};
use crate::pipeline::ManifestEntry;

pub const DAY_MS: i64 = 86_400_000;
/// 2024-01-01T00:00:00Z.
pub const BASE_TS: TimestampMs = 1_704_067_200_000;
pub const LEDGER_FILE: &str = "ledger.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Paragraph position of the fact in fact-bearing documents.
pub const FACT_POSITION: u64 = 1;
/// Structural edits (insert, delete, move) never touch positions below this.
const PINNED: usize = 2;

/// Operational facts whose value changes at versions 3 and 5. Subject,
/// then the value for versions 1-2, 3-4 and 5.
pub const FACTS: [(&str, [&str; 3]); 20] = [
    ("primary datastore for the billing service", ["PostgreSQL on host orca", "PostgreSQL on host beluga", "CockroachDB cluster narwhal"]),
    ("on-call rotation owner for payments", ["Priya Raman", "Tomasz Kowalski", "Amara Okafor"]),
    ("default retention window for audit logs", ["ninety days", "one hundred eighty days", "seven years"]),
    ("maximum upload size accepted by the gateway", ["ten megabytes", "fifty megabytes", "two gigabytes"]),
    ("release train cadence for the mobile apps", ["every two weeks", "every week", "every three weeks"]),
    ("encryption algorithm for archived backups", ["AES-128-CBC", "AES-256-GCM", "ChaCha20-Poly1305"]),
    ("escalation contact for datacenter incidents", ["Helsinki facilities desk", "Frankfurt operations center", "Dublin network operations"]),
    ("message broker used by the notification pipeline", ["RabbitMQ", "Apache Kafka", "NATS JetStream"]),
    ("approved base image for production containers", ["Debian bullseye slim", "Debian bookworm slim", "Alpine edge hardened"]),
    ("quarterly budget ceiling for cloud spend", ["forty thousand dollars", "sixty thousand dollars", "fifty five thousand dollars"]),
    ("feature flag provider for the web frontend", ["LaunchDarkly", "Unleash self hosted", "Flagsmith"]),
    ("password rotation interval for service accounts", ["every sixty days", "every thirty days", "every ninety days"]),
    ("region hosting the analytics warehouse", ["us-east", "eu-west", "ap-southeast"]),
    ("support hours for the enterprise tier", ["weekdays nine to five", "twenty four by five", "twenty four by seven"]),
    ("code review approvals required before merging", ["one approval", "two approvals", "two approvals plus security signoff"]),
    ("monitoring stack for the search cluster", ["Nagios with Graphite", "Prometheus with Grafana", "OpenTelemetry with Tempo"]),
    ("disaster recovery objective for the ledger database", ["four hours", "one hour", "fifteen minutes"]),
    ("vendor supplying office network hardware", ["Juniper", "Aruba", "Ubiquiti"]),
    ("team responsible for the identity platform", ["Platform Security", "Identity Engineering", "Trust and Safety Infrastructure"]),
    ("scheduled maintenance window for the mainframe", ["Sunday at two in the morning", "Saturday at midnight", "Wednesday at four in the morning"]),
];

/// Index into the value list of [`FACTS`] for a 1-based version.
pub fn fact_value_index(version: usize) -> usize {
    match version {
        0..=2 => 0,
        3 | 4 => 1,
        _ => 2,
    }
}

pub fn fact_text(fact: usize, version: usize) -> String {
    let (subject, values) = FACTS[fact];
    format!("Operations record: the {subject} is {}.", values[fact_value_index(version)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub docs: usize,
    pub versions: usize,
    pub min_paragraphs: usize,
    pub max_paragraphs: usize,
    /// Bounds on the per-version share of paragraphs that need embedding.
    pub min_rate: f64,
    pub max_rate: f64,
    pub seed: u64,
    pub base_ts: TimestampMs,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            docs: 100,
            versions: 5,
            min_paragraphs: 20,
            max_paragraphs: 28,
            min_rate: 0.10,
            max_rate: 0.15,
            seed: 0x7e4d_c0de_0000_0005,
            base_ts: BASE_TS,
        }
    }
}

impl CorpusConfig {
    pub fn doc_id(doc: usize) -> String {
        format!("doc-{doc:03}")
    }

    /// Ingest time of a 1-based version. Strictly increasing in (version, doc).
    pub fn ts(&self, version: usize, doc: usize) -> TimestampMs {
        self.base_ts + (version as i64 - 1) * DAY_MS + doc as i64 * 1000
    }

    /// Document carrying fact `i`, when that fact is part of the corpus.
    pub fn fact_doc(&self, fact: usize) -> Option<usize> {
        let d = fact * 5;
        (d < self.docs).then_some(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mutation {
    Edit { position: u64 },
    Insert { position: u64 },
    Delete { position: u64 },
    Move { from: u64, to: u64 },
    /// Case and line-wrap change that normalizes away.
    Cosmetic { position: u64 },
    NoOp,
}

/// Expected classification: positions in the new version, except `deleted`
/// (old positions) and `moved` (old, new).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedChanges {
    pub new: Vec<u64>,
    pub modified: Vec<u64>,
    pub deleted: Vec<u64>,
    pub unchanged: Vec<u64>,
    pub moved: Vec<(u64, u64)>,
}

impl ExpectedChanges {
    pub fn embeddings(&self) -> usize {
        self.new.len() + self.modified.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub doc_id: String,
    pub version: usize,
    pub ts: TimestampMs,
    pub total_chunks: usize,
    pub mutations: Vec<Mutation>,
    pub expected: ExpectedChanges,
    /// Share of this version's paragraphs that are new or edited.
    pub change_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub config: CorpusConfig,
    pub entries: Vec<LedgerEntry>,
}

impl Ledger {
    /// Mean change rate over versions after the first.
    pub fn mean_rate_non_first(&self) -> f64 {
        let rates: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.version > 1)
            .map(|e| e.change_rate)
            .collect();
        if rates.is_empty() {
            0.0
        } else {
            rates.iter().sum::<f64>() / rates.len() as f64
        }
    }

    /// Scripted mutations after the first version.
    pub fn mutation_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.version > 1)
            .map(|e| e.mutations.len())
            .sum()
    }

    pub fn embeddings(&self) -> usize {
        self.entries.iter().map(|e| e.expected.embeddings()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocVersion {
    pub doc_id: String,
    pub version: usize,
    pub ts: TimestampMs,
    pub text: String,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    /// Ingest order: all documents at version 1, then version 2, ...
    pub versions: Vec<DocVersion>,
    pub ledger: Ledger,
}

impl Corpus {
    pub fn generate(config: CorpusConfig) -> Result<Self> {
        if config.docs == 0 || config.versions == 0 {
            return Err(Error::InvalidInput("corpus needs at least one document and one version".into()));
        }
        if config.min_paragraphs < PINNED + 4 || config.max_paragraphs < config.min_paragraphs {
            return Err(Error::InvalidInput(format!(
                "paragraph bounds must satisfy {} <= min <= max",
                PINNED + 4
            )));
        }
        if !(0.0 < config.min_rate && config.min_rate <= config.max_rate && config.max_rate < 1.0) {
            return Err(Error::InvalidInput("rates must satisfy 0 < min <= max < 1".into()));
        }
        Generator::new(config).run()
    }

    pub fn items(&self) -> Result<Vec<(RawDocument, TimestampMs)>> {
        self.versions
            .iter()
            .map(|v| Ok((RawDocument::new(v.doc_id.clone(), v.text.clone())?, v.ts)))
            .collect()
    }

    /// Write `docs/<doc_id>/v<N>.md`, a manifest and the ledger under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |e| Error::io(&p, e)
        };
        let mut manifest = String::new();
        for v in &self.versions {
            let rel = Path::new("docs").join(&v.doc_id).join(format!("v{}.md", v.version));
            let path = dir.join(&rel);
            let parent = path.parent().expect("nested path");
            fs::create_dir_all(parent).map_err(io(parent))?;
            fs::write(&path, &v.text).map_err(io(&path))?;
            let entry = ManifestEntry {
                doc_id: v.doc_id.clone(),
                path: rel,
                ts: v.ts,
            };
            manifest.push_str(&serde_json::to_string(&entry).expect("manifest entry serializes"));
            manifest.push('\n');
        }
        let m = dir.join(MANIFEST_FILE);
        fs::write(&m, manifest).map_err(io(&m))?;
        let l = dir.join(LEDGER_FILE);
        let json = serde_json::to_string_pretty(&self.ledger).expect("ledger serializes");
        fs::write(&l, json).map_err(io(&l))?;
        Ok(())
    }
}

pub fn read_ledger(path: &Path) -> Result<Ledger> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone)]
struct Para {
    id: u64,
    words: Vec<String>,
    width: usize,
}

impl Para {
    fn render(&self) -> String {
        let mut out = String::new();
        let mut line = 0;
        for w in &self.words {
            if line > 0 && line + 1 + w.len() > self.width {
                out.push('\n');
                line = 0;
            } else if line > 0 {
                out.push(' ');
                line += 1;
            }
            out.push_str(w);
            line += w.len();
        }
        out
    }

    /// Normalized identity of the text. ASCII only, so lowercasing suffices.
    fn key(&self) -> String {
        self.words.join(" ").to_ascii_lowercase()
    }
}

struct Generator {
    config: CorpusConfig,
    rng: ChaCha8Rng,
    vocab: Vec<String>,
    next_id: u64,
}

enum Slot {
    Old(usize),
    Fresh,
}

impl Generator {
    fn new(config: CorpusConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let vocab = make_vocab(&mut rng, 3000);
        Self {
            config,
            rng,
            vocab,
            next_id: 0,
        }
    }

    fn run(mut self) -> Result<Corpus> {
        let cfg = self.config.clone();
        let fact_of: HashMap<usize, usize> = (0..FACTS.len())
            .filter_map(|f| cfg.fact_doc(f).map(|d| (d, f)))
            .collect();
        let topics: Vec<Vec<String>> = (0..cfg.docs)
            .map(|_| self.vocab.choose_multiple(&mut self.rng, 300).cloned().collect())
            .collect();
        let mut docs: Vec<Vec<Para>> = Vec::with_capacity(cfg.docs);
        let mut versions = Vec::new();
        let mut entries = Vec::new();

        for v in 1..=cfg.versions {
            for d in 0..cfg.docs {
                let fact = fact_of.get(&d).copied();
                let (paras, mutations, expected) = if v == 1 {
                    let n = self.rng.random_range(cfg.min_paragraphs..=cfg.max_paragraphs);
                    let mut paras = Vec::with_capacity(n);
                    let mut seen = HashSet::new();
                    for i in 0..n {
                        let p = match fact {
                            Some(f) if i as u64 == FACT_POSITION => self.fact_para(f, 1),
                            _ => self.fresh(&topics[d], &seen),
                        };
                        seen.insert(p.key());
                        paras.push(p);
                    }
                    let expected = ExpectedChanges {
                        new: (0..n as u64).collect(),
                        ..Default::default()
                    };
                    (paras, Vec::new(), expected)
                } else {
                    let fact_edit = fact.filter(|_| fact_value_index(v) != fact_value_index(v - 1));
                    self.mutate(&docs[d], &topics[d], fact_edit, v)
                };
                let total = paras.len();
                let rate = if total == 0 {
                    0.0
                } else {
                    expected.embeddings() as f64 / total as f64
                };
                let text = paras.iter().map(Para::render).collect::<Vec<_>>().join("\n\n") + "\n";
                let doc_id = CorpusConfig::doc_id(d);
                let ts = cfg.ts(v, d);
                versions.push(DocVersion {
                    doc_id: doc_id.clone(),
                    version: v,
                    ts,
                    text,
                });
                entries.push(LedgerEntry {
                    doc_id,
                    version: v,
                    ts,
                    total_chunks: total,
                    mutations,
                    expected,
                    change_rate: rate,
                });
                if v == 1 {
                    docs.push(paras);
                } else {
                    docs[d] = paras;
                }
            }
        }
        Ok(Corpus {
            versions,
            ledger: Ledger { config: cfg, entries },
        })
    }

    fn id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    fn fact_para(&mut self, fact: usize, version: usize) -> Para {
        Para {
            id: self.id(),
            words: fact_text(fact, version).split(' ').map(str::to_owned).collect(),
            width: usize::MAX,
        }
    }

    fn word(&mut self, topic: &[String]) -> String {
        if self.rng.random_bool(0.7) {
            topic.choose(&mut self.rng).expect("topic vocabulary").clone()
        } else {
            self.vocab.choose(&mut self.rng).expect("vocabulary").clone()
        }
    }

    fn fresh(&mut self, topic: &[String], avoid: &HashSet<String>) -> Para {
        loop {
            let mut words = Vec::new();
            for _ in 0..self.rng.random_range(3..=5) {
                let n = self.rng.random_range(6..=12);
                for i in 0..n {
                    let mut w = self.word(topic);
                    if i == 0 {
                        w[..1].make_ascii_uppercase();
                    }
                    if i == n - 1 {
                        w.push('.');
                    }
                    words.push(w);
                }
            }
            let p = Para {
                id: self.id(),
                words,
                width: self.rng.random_range(60..=90),
            };
            if !avoid.contains(&p.key()) {
                return p;
            }
        }
    }

    /// Replace a few words, keeping sentence shape.
    fn edit(&mut self, p: &Para, topic: &[String], avoid: &HashSet<String>) -> Para {
        loop {
            let mut q = p.clone();
            for _ in 0..self.rng.random_range(2..=4) {
                let i = self.rng.random_range(0..q.words.len());
                let mut w = self.word(topic);
                if q.words[i].ends_with('.') {
                    w.push('.');
                }
                if q.words[i].starts_with(|c: char| c.is_ascii_uppercase()) {
                    w[..1].make_ascii_uppercase();
                }
                q.words[i] = w;
            }
            if !avoid.contains(&q.key()) {
                return q;
            }
        }
    }

    fn cosmetic(&mut self, p: &Para) -> Para {
        let mut q = p.clone();
        q.words[0] = q.words[0].to_ascii_uppercase();
        q.width = if p.width == usize::MAX {
            72
        } else {
            self.rng.random_range(40..=100)
        };
        q
    }

    fn target_changes(&mut self, n: usize) -> usize {
        let lo = (self.config.min_rate * n as f64).ceil() as usize;
        let hi = (self.config.max_rate * n as f64).floor() as usize;
        if lo <= hi {
            self.rng.random_range(lo..=hi)
        } else {
            ((self.config.min_rate + self.config.max_rate) / 2.0 * n as f64).round() as usize
        }
        .max(1)
    }

    fn mutate(
        &mut self,
        old: &[Para],
        topic: &[String],
        fact_edit: Option<usize>,
        version: usize,
    ) -> (Vec<Para>, Vec<Mutation>, ExpectedChanges) {
        let n_old = old.len();
        let old_keys: HashSet<String> = old.iter().map(Para::key).collect();
        let fact_pos = fact_edit.map(|_| FACT_POSITION as usize);
        let fact_doc_pos = fact_edit.is_some() || old.get(FACT_POSITION as usize).is_some_and(|p| p.width == usize::MAX);

        if fact_edit.is_none() && self.rng.random_bool(0.04) {
            let expected = ExpectedChanges {
                unchanged: (0..n_old as u64).collect(),
                ..Default::default()
            };
            return (old.to_vec(), vec![Mutation::NoOp], expected);
        }

        // Structural plan over old indices, resampled until identity and
        // position agree.
        let (slots, edits, deleted) = loop {
            let mut slots: Vec<Slot> = (0..n_old).map(Slot::Old).collect();
            let mut deleted = None;
            if self.rng.random_bool(0.25) && n_old > PINNED + 3 {
                let q = self.rng.random_range(PINNED..n_old);
                slots.remove(q);
                deleted = Some(q);
            }
            let mut inserted = None;
            if self.rng.random_bool(0.35) {
                let p = self.rng.random_range(PINNED..=slots.len());
                slots.insert(p, Slot::Fresh);
                inserted = Some(p);
            }
            if self.rng.random_bool(0.15) && slots.len() > PINNED + 3 {
                let i = self.rng.random_range(PINNED..slots.len());
                let j = self.rng.random_range(PINNED..slots.len());
                if i != j && matches!(slots[i], Slot::Old(_)) && matches!(slots[j], Slot::Old(_)) {
                    slots.swap(i, j);
                }
            }
            if let (Some(p), Some(q)) = (inserted, deleted) {
                // A fresh paragraph on a deleted paragraph's slot would read as an edit.
                if p < n_old && p == q {
                    continue;
                }
            }
            let n_new = slots.len();
            let k = self.target_changes(n_new);
            let fixed = inserted.is_some() as usize + fact_edit.is_some() as usize;
            let want = k.saturating_sub(fixed);
            let mut eligible: Vec<usize> = slots
                .iter()
                .enumerate()
                .filter_map(|(p, s)| match s {
                    Slot::Old(q) if *q == p && Some(p) != fact_pos && !(fact_doc_pos && p == FACT_POSITION as usize) => {
                        Some(p)
                    }
                    _ => None,
                })
                .collect();
            if eligible.len() < want {
                continue;
            }
            eligible.shuffle(&mut self.rng);
            eligible.truncate(want);
            if let Some(p) = fact_pos {
                eligible.push(p);
            }
            eligible.sort_unstable();
            break (slots, eligible, deleted);
        };

        let mut avoid = old_keys;
        let mut mutations = Vec::new();
        let mut expected = ExpectedChanges::default();
        if let Some(q) = deleted {
            mutations.push(Mutation::Delete { position: q as u64 });
            expected.deleted.push(q as u64);
        }
        let mut paras = Vec::with_capacity(slots.len());
        for (p, slot) in slots.iter().enumerate() {
            let pos = p as u64;
            match *slot {
                Slot::Fresh => {
                    let para = self.fresh(topic, &avoid);
                    avoid.insert(para.key());
                    mutations.push(Mutation::Insert { position: pos });
                    expected.new.push(pos);
                    paras.push(para);
                }
                Slot::Old(q) if edits.binary_search(&p).is_ok() => {
                    let para = match fact_edit {
                        Some(f) if Some(p) == fact_pos => Para {
                            id: old[q].id,
                            ..self.fact_para(f, version)
                        },
                        _ => self.edit(&old[q], topic, &avoid),
                    };
                    avoid.insert(para.key());
                    mutations.push(Mutation::Edit { position: pos });
                    expected.modified.push(pos);
                    paras.push(para);
                }
                Slot::Old(q) => {
                    let para = if self.rng.random_bool(0.03) {
                        mutations.push(Mutation::Cosmetic { position: pos });
                        self.cosmetic(&old[q])
                    } else {
                        old[q].clone()
                    };
                    if q == p {
                        expected.unchanged.push(pos);
                    } else {
                        expected.moved.push((q as u64, pos));
                    }
                    paras.push(para);
                }
            }
        }
        // Swaps are the only scripted moves; shifts are consequences.
        for (p, slot) in slots.iter().enumerate() {
            if let Slot::Old(q) = *slot {
                let shifted = {
                    let before_ins = slots[..p].iter().filter(|s| matches!(s, Slot::Fresh)).count();
                    let before_del = deleted.filter(|&d| d < q).is_some() as usize;
                    q + before_ins - before_del
                };
                if shifted != p {
                    mutations.push(Mutation::Move {
                        from: q as u64,
                        to: p as u64,
                    });
                }
            }
        }
        expected.moved.sort_unstable();
        debug_assert_eq!(
            paras.iter().map(|p| p.id).collect::<HashSet<_>>().len(),
            paras.len()
        );
        (paras, mutations, expected)
    }
}

fn make_vocab(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "th", "sh"];
    const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=4);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), NUCLEI.choose(rng).unwrap()))
            .collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}
