//! Human and JSON-lines output.

use std::path::Path;

use chrono::DateTime;
use serde::Serialize;
use serde_json::json;

use tempovec::change_detection::ChangeSet;
use tempovec::clock::TimestampMs;
use tempovec::cold::{ColdStats, TimelineEntry};
use tempovec::corpus::Corpus;
use tempovec::hot::HotStats;
use tempovec::pipeline::{CdcSummary, CorpusReport};
use tempovec::query::{Hit, RangeResult, Tier};
use tempovec::transactions::{DivergenceReport, ReconcileReport};

use crate::Format;

pub struct Out {
    format: Format,
}

fn line(v: &impl Serialize) {
    println!("{}", serde_json::to_string(v).expect("output serializes"));
}

pub fn fmt_ts(ts: TimestampMs) -> String {
    DateTime::from_timestamp_millis(ts)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

fn preview(s: &str) -> String {
    let flat: String = s.split_whitespace().collect::<Vec<_>>().join(" ");
    match flat.char_indices().nth(160) {
        Some((i, _)) => format!("{}...", &flat[..i]),
        None => flat,
    }
}

#[derive(Serialize)]
struct RankedHit<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    endpoint: Option<&'a str>,
    rank: usize,
    #[serde(flatten)]
    hit: &'a Hit,
}

impl Out {
    pub fn new(format: Format) -> Self {
        Self { format }
    }

    fn json(&self) -> bool {
        self.format == Format::Json
    }

    pub fn summary(&self, s: &CdcSummary) {
        if self.json() {
            return line(s);
        }
        let txn = s.txn_version.map_or_else(|| "none".to_owned(), |v| v.to_string());
        println!(
            "{} total={} new={} modified={} deleted={} unchanged={} moved={} changed={} embeddings={} fraction={:.4} txn={} elapsed_ms={}",
            s.doc_id,
            s.total_chunks,
            s.new_count,
            s.modified_count,
            s.deleted_count,
            s.unchanged_count,
            s.moved_count,
            s.changed(),
            s.embeddings_computed,
            s.reprocessed_fraction,
            txn,
            s.elapsed_ms
        );
    }

    fn hits(&self, endpoint: Option<&str>, hits: &[Hit]) {
        if self.json() {
            for (i, hit) in hits.iter().enumerate() {
                line(&RankedHit {
                    endpoint,
                    rank: i + 1,
                    hit,
                });
            }
            return;
        }
        if hits.is_empty() {
            println!("no results");
        }
        for (i, h) in hits.iter().enumerate() {
            let to = h.valid_to.map_or_else(|| "now".to_owned(), fmt_ts);
            let tier = match h.tier {
                Tier::Hot => "hot".to_owned(),
                Tier::Cold => format!("cold v{}", h.version_number.unwrap_or(0)),
            };
            println!(
                "{:>2}. {:.4}  {}:{}  [{}, {})  {}",
                i + 1,
                h.similarity,
                h.doc_id,
                h.position,
                fmt_ts(h.valid_from),
                to,
                tier
            );
            println!("    {}", preview(&h.content));
        }
    }

    pub fn ranked(&self, hits: &[Hit]) {
        self.hits(None, hits);
    }

    pub fn range(&self, r: &RangeResult) {
        if self.json() {
            self.hits(Some("start"), &r.at_start);
            self.hits(Some("end"), &r.at_end);
            return line(&json!({ "diff": r.diff, "end_tier": r.end_tier }));
        }
        println!("at {}:", fmt_ts(r.start));
        self.hits(None, &r.at_start);
        let tier = match r.end_tier {
            Tier::Hot => "hot",
            Tier::Cold => "cold",
        };
        println!("at {} ({tier}):", fmt_ts(r.end));
        self.hits(None, &r.at_end);
        println!(
            "diff: {} only at start, {} only at end, {} at both",
            r.diff.only_start.len(),
            r.diff.only_end.len(),
            r.diff.both.len()
        );
        for c in &r.diff.only_start {
            println!("  - {}", c.short());
        }
        for c in &r.diff.only_end {
            println!("  + {}", c.short());
        }
    }

    pub fn timeline(&self, doc_id: &str, t: &[TimelineEntry]) {
        if self.json() {
            for e in t {
                line(&json!({ "doc_id": doc_id, "entry": e }));
            }
            return;
        }
        println!(
            "{:>7}  {:>6}  {:<24}  {:>7}  {:>7}  {:>5}  {:>7}",
            "version", "txn", "commit_ts", "inserts", "updates", "moves", "deletes"
        );
        for e in t {
            println!(
                "{:>7}  {:>6}  {:<24}  {:>7}  {:>7}  {:>5}  {:>7}",
                e.version,
                e.txn_version,
                fmt_ts(e.commit_ts),
                e.inserts,
                e.updates,
                e.moves,
                e.deletes
            );
        }
    }

    pub fn diff(&self, cs: &ChangeSet) {
        // (sort position, change, old position, new position)
        let mut rows: Vec<(u64, &str, Option<u64>, Option<u64>)> = Vec::new();
        rows.extend(cs.new.iter().map(|(p, _)| (*p, "added", None, Some(*p))));
        rows.extend(cs.modified.iter().map(|(p, _, _)| (*p, "modified", Some(*p), Some(*p))));
        rows.extend(cs.deleted.iter().map(|(p, _)| (*p, "removed", Some(*p), None)));
        rows.extend(cs.moved.iter().map(|(a, b, _)| (*b, "moved", Some(*a), Some(*b))));
        rows.sort();
        if self.json() {
            for (_, change, old, new) in &rows {
                line(&json!({ "change": change, "old_position": old, "new_position": new }));
            }
            return;
        }
        if rows.is_empty() {
            println!("no changes");
        }
        for (p, change, old, _) in rows {
            match change {
                "moved" => println!("position {}: moved from {}", p, old.unwrap_or(p)),
                _ => println!("position {p}: {change}"),
            }
        }
    }

    pub fn stats(&self, hot: &HotStats, cold: &ColdStats) {
        let ratio = if cold.total_records == 0 {
            0.0
        } else {
            hot.active_count as f64 / cold.total_records as f64
        };
        let reduction = if cold.total_records == 0 { 0.0 } else { 1.0 - ratio };
        if self.json() {
            return line(&json!({
                "hot": hot,
                "cold": cold,
                "active_to_total": ratio,
                "hot_reduction": reduction,
            }));
        }
        println!("hot active chunks      {}", hot.active_count);
        println!("hot tombstones         {}", hot.tombstone_count);
        println!("hot bytes on disk      {}", hot.bytes_on_disk);
        println!("cold total records     {}", cold.total_records);
        println!("cold active records    {}", cold.active_records);
        println!("cold superseded        {}", cold.superseded);
        println!("cold deleted           {}", cold.deleted);
        println!("cold transactions      {}", cold.txn_count);
        println!("cold bytes on disk     {}", cold.bytes_on_disk);
        println!("active/total           {ratio:.4}");
        println!("hot-tier reduction     {:.2}%", reduction * 100.0);
    }

    pub fn reconcile(&self, r: &ReconcileReport) {
        if self.json() {
            return line(r);
        }
        println!(
            "repaired={} compensated={} skipped={} hash_store_resynced={}",
            r.repaired, r.compensated, r.skipped, r.hash_store_resynced
        );
        for e in &r.errors {
            println!("error: {e}");
        }
    }

    pub fn verify(&self, d: &DivergenceReport) {
        if self.json() {
            return line(d);
        }
        if d.is_empty() {
            println!("tiers consistent");
        }
        for r in &d.only_hot {
            println!("only in hot: {}:{} {}", r.doc_id, r.position, r.chunk_id.short());
        }
        for r in &d.only_cold {
            println!("only in cold: {}:{} {}", r.doc_id, r.position, r.chunk_id.short());
        }
    }

    pub fn compacted(&self, before: &HotStats, after: &HotStats) {
        if self.json() {
            return line(&json!({ "before": before, "after": after }));
        }
        println!(
            "compacted: {} tombstones removed, {} active, {} -> {} bytes",
            before.tombstone_count, after.active_count, before.bytes_on_disk, after.bytes_on_disk
        );
    }

    pub fn corpus_written(&self, dir: &Path, c: &Corpus) {
        let l = &c.ledger;
        if self.json() {
            return line(&json!({
                "dir": dir,
                "versions": c.versions.len(),
                "mutations": l.mutation_count(),
                "expected_embeddings": l.embeddings(),
                "mean_change_rate": l.mean_rate_non_first(),
            }));
        }
        println!(
            "wrote {} document versions to {} ({} scripted mutations, mean change rate {:.4})",
            c.versions.len(),
            dir.display(),
            l.mutation_count(),
            l.mean_rate_non_first()
        );
    }

    pub fn corpus_report(&self, r: &CorpusReport) {
        if self.json() {
            for s in &r.summaries {
                line(s);
            }
            for f in &r.failures {
                line(&json!({ "failure": f }));
            }
            return line(&json!({
                "versions_ingested": r.versions_ingested,
                "embeddings_computed": r.embeddings_computed,
                "transactions": r.transactions,
                "mean_fraction_non_first": r.mean_fraction_non_first,
                "latency": r.latency,
            }));
        }
        println!(
            "ingested {} versions: new={} modified={} deleted={} unchanged={} moved={} embeddings={} transactions={}",
            r.versions_ingested,
            r.new_count,
            r.modified_count,
            r.deleted_count,
            r.unchanged_count,
            r.moved_count,
            r.embeddings_computed,
            r.transactions
        );
        if let Some(m) = r.mean_fraction_non_first {
            println!("mean reprocessed fraction after first version: {m:.4}");
        }
        println!(
            "latency ms: p50={} p95={} max={}",
            r.latency.p50_ms, r.latency.p95_ms, r.latency.max_ms
        );
        for f in &r.failures {
            println!("failed: {} at {}: {}", f.doc_id, f.ts, f.error);
        }
    }
}
