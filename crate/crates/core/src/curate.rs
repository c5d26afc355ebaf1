//! Dataset curation: event-level pretraining selection under species and
//! per-recording caps, the k-shot subset builder, and the downstream
//! sampler that switches between the two by task style.
//!
//! All sampling is a pure function of (metadata, config, seed); ties are
//! broken by recording id so the output is a deterministic total order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::sample_rng;
use crate::trainer::fnv1a;
use crate::{Error, Result};

pub const CLIP_SECONDS: f64 = 5.0;
/// Longer recordings are eligible only without secondary species.
pub const FALLBACK_SECONDS: f64 = 20.0;

/// File-level metadata for one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub recording_id: String,
    /// Primary species label.
    pub species: String,
    #[serde(default)]
    pub secondary_species: Vec<String>,
    pub duration_s: f64,
    /// Detected vocalization intervals (start_s, end_s).
    pub events: Vec<(f64, f64)>,
}

impl RecordingMeta {
    pub fn validate(&self) -> Result<()> {
        if self.duration_s <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "recording {} has non-positive duration",
                self.recording_id
            )));
        }
        for &(s, e) in &self.events {
            if !(0.0..=self.duration_s).contains(&s) || e < s || e > self.duration_s {
                return Err(Error::InvalidArgument(format!(
                    "recording {} event ({s}, {e}) outside [0, {}]",
                    self.recording_id, self.duration_s
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurationConfig {
    pub max_events_per_species: usize,
    pub max_events_per_recording: usize,
    pub min_events_per_recording: usize,
    pub seed: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            max_events_per_species: 500,
            max_events_per_recording: 2,
            min_events_per_recording: 1,
            seed: 0,
        }
    }
}

impl CurationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_events_per_recording == 0
            || self.max_events_per_recording < self.min_events_per_recording
        {
            return Err(Error::InvalidArgument(
                "per-recording caps must satisfy max >= min >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// One 5-second training clip centered on a detected event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRef {
    pub clip_id: String,
    pub recording_id: String,
    pub event_index: usize,
    pub start_s: f64,
    pub labels: Vec<String>,
}

fn clip_start(meta: &RecordingMeta, event_index: usize) -> f64 {
    let (s, e) = meta.events[event_index];
    let mid = (s + e) / 2.0;
    let max_start = (meta.duration_s - CLIP_SECONDS).max(0.0);
    (mid - CLIP_SECONDS / 2.0).clamp(0.0, max_start)
}

fn clip_ref(meta: &RecordingMeta, event_index: usize) -> ClipRef {
    let mut labels = vec![meta.species.clone()];
    labels.extend(meta.secondary_species.iter().cloned());
    ClipRef {
        clip_id: format!("{}#e{}", meta.recording_id, event_index),
        recording_id: meta.recording_id.clone(),
        event_index,
        start_s: clip_start(meta, event_index),
        labels,
    }
}

/// Event-level pretraining selection: applies the per-recording cap, then
/// iteratively trims each over-represented species, always removing the
/// last event of the currently most-selected recording (ascending
/// recording id on ties). If every recording is already at the floor and a
/// species still exceeds its cap, whole recordings are dropped from the
/// back of the id order. Returns (recording_id, event_index) pairs in
/// id-sorted order.
pub fn curate_pretrain(
    metas: &[RecordingMeta],
    cfg: &CurationConfig,
) -> Result<Vec<(String, usize)>> {
    cfg.validate()?;
    for m in metas {
        m.validate()?;
    }
    // kept[i] = number of leading events retained for metas-sorted index i
    let mut sorted: Vec<&RecordingMeta> = metas.iter().filter(|m| !m.events.is_empty()).collect();
    sorted.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
    let mut kept: Vec<usize> = sorted
        .iter()
        .map(|m| m.events.len().min(cfg.max_events_per_recording))
        .collect();

    let mut by_species: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, m) in sorted.iter().enumerate() {
        by_species.entry(m.species.as_str()).or_default().push(i);
    }

    for recordings in by_species.values() {
        while recordings.iter().map(|&i| kept[i]).sum::<usize>() > cfg.max_events_per_species {
            // most-selected recording first; recordings are id-sorted, so
            // the first maximum is the tie-break winner
            let &target = recordings
                .iter()
                .max_by_key(|&&i| kept[i])
                .expect("species has recordings");
            if kept[target] > cfg.min_events_per_recording {
                kept[target] -= 1;
                continue;
            }
            // every recording is at the floor: the caps are jointly
            // infeasible, so drop whole recordings from the back
            let victim = recordings
                .iter()
                .rev()
                .find(|&&i| kept[i] > 0)
                .copied()
                .expect("over cap implies a non-empty recording");
            kept[victim] = 0;
        }
    }

    let mut out = Vec::new();
    for (i, m) in sorted.iter().enumerate() {
        for e in 0..kept[i] {
            out.push((m.recording_id.clone(), e));
        }
    }
    Ok(out)
}

/// Independent verifier for the three curation constraints.
pub fn check_constraints(
    metas: &[RecordingMeta],
    cfg: &CurationConfig,
    selection: &[(String, usize)],
) -> Result<()> {
    let by_id: BTreeMap<&str, &RecordingMeta> = metas
        .iter()
        .map(|m| (m.recording_id.as_str(), m))
        .collect();
    let mut per_recording: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (id, e) in selection {
        let meta = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown recording {id}")))?;
        if *e >= meta.events.len() {
            return Err(Error::InvalidArgument(format!(
                "recording {id} has no event {e}"
            )));
        }
        per_recording.entry(id.as_str()).or_default().push(*e);
    }
    let mut per_species: BTreeMap<&str, usize> = BTreeMap::new();
    for (id, events) in &mut per_recording {
        events.sort_unstable();
        events.dedup();
        if events.len() < cfg.min_events_per_recording
            || events.len() > cfg.max_events_per_recording
        {
            return Err(Error::InvalidArgument(format!(
                "recording {id} keeps {} events, caps are [{}, {}]",
                events.len(),
                cfg.min_events_per_recording,
                cfg.max_events_per_recording
            )));
        }
        *per_species.entry(by_id[id].species.as_str()).or_default() += events.len();
    }
    for (sp, n) in per_species {
        if n > cfg.max_events_per_species {
            return Err(Error::InvalidArgument(format!(
                "species {sp} keeps {n} events, cap is {}",
                cfg.max_events_per_species
            )));
        }
    }
    Ok(())
}

/// Extracted samples of one eligible recording: the randomly chosen
/// primary event plus leftovers.
struct RecordingSamples<'m> {
    meta: &'m RecordingMeta,
    primary: usize,
    leftovers: Vec<usize>,
}

fn eligible(meta: &RecordingMeta) -> bool {
    !meta.events.is_empty()
        && (meta.duration_s <= CLIP_SECONDS
            || (meta.duration_s <= FALLBACK_SECONDS && meta.secondary_species.is_empty()))
}

fn extract_samples<'m>(metas: &'m [RecordingMeta], seed: u64) -> Vec<RecordingSamples<'m>> {
    let mut sorted: Vec<&RecordingMeta> = metas.iter().filter(|m| eligible(m)).collect();
    sorted.sort_by(|a, b| a.recording_id.cmp(&b.recording_id));
    sorted
        .into_iter()
        .map(|meta| {
            let mut rng = sample_rng(seed, fnv1a(meta.recording_id.as_bytes()));
            let primary = rng.random_range(0..meta.events.len());
            let leftovers = (0..meta.events.len()).filter(|&e| e != primary).collect();
            RecordingSamples { meta, primary, leftovers }
        })
        .collect()
}

/// Builds a k-shot train split: per class, up to k clips drawn first from
/// primary samples, then from leftovers, never from recordings that failed
/// the duration filter. Classes with too few eligible recordings end up
/// with fewer than k clips.
pub fn sample_fewshot(metas: &[RecordingMeta], k: usize, seed: u64) -> Result<Vec<ClipRef>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".to_string()));
    }
    for m in metas {
        m.validate()?;
    }
    let samples = extract_samples(metas, seed);
    let mut classes: Vec<&str> = metas.iter().map(|m| m.species.as_str()).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut out = Vec::new();
    for class in classes {
        let mut primaries: Vec<(&RecordingMeta, usize)> = Vec::new();
        let mut leftovers: Vec<(&RecordingMeta, usize)> = Vec::new();
        for rs in samples.iter().filter(|rs| rs.meta.species == class) {
            primaries.push((rs.meta, rs.primary));
            leftovers.extend(rs.leftovers.iter().map(|&e| (rs.meta, e)));
        }
        let mut rng = sample_rng(seed, fnv1a(class.as_bytes()));
        primaries.shuffle(&mut rng);
        leftovers.shuffle(&mut rng);
        let mut picked: Vec<(&RecordingMeta, usize)> = primaries.into_iter().take(k).collect();
        if picked.len() < k {
            let missing = k - picked.len();
            picked.extend(leftovers.into_iter().take(missing));
        }
        picked.sort_by(|a, b| (a.0.recording_id.as_str(), a.1).cmp(&(b.0.recording_id.as_str(), b.1)));
        out.extend(picked.into_iter().map(|(m, e)| clip_ref(m, e)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskStyle {
    /// Few classes: event curation with caps (500, 5).
    LowClassCount,
    /// Many classes: the k-shot sampler with k = 64.
    HighClassCount,
}

/// Downstream train-split construction, switched on task style.
pub fn sample_downstream(
    metas: &[RecordingMeta],
    style: TaskStyle,
    seed: u64,
) -> Result<Vec<ClipRef>> {
    if metas.is_empty() {
        return Ok(Vec::new());
    }
    match style {
        TaskStyle::LowClassCount => {
            let cfg = CurationConfig {
                max_events_per_species: 500,
                max_events_per_recording: 5,
                min_events_per_recording: 1,
                seed,
            };
            let by_id: BTreeMap<&str, &RecordingMeta> = metas
                .iter()
                .map(|m| (m.recording_id.as_str(), m))
                .collect();
            Ok(curate_pretrain(metas, &cfg)?
                .into_iter()
                .map(|(id, e)| clip_ref(by_id[id.as_str()], e))
                .collect())
        }
        TaskStyle::HighClassCount => sample_fewshot(metas, 64, seed),
    }
}

pub fn read_metas<P: AsRef<Path>>(path: P) -> Result<Vec<RecordingMeta>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let meta: RecordingMeta = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("bad metadata on line {}: {e}", i + 1)))?;
        meta.validate()?;
        out.push(meta);
    }
    Ok(out)
}

pub fn write_split<P: AsRef<Path>>(path: P, clips: &[ClipRef]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for clip in clips {
        serde_json::to_writer(&mut w, clip)
            .map_err(|e| Error::Format(format!("split serialization failed: {e}")))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_split<P: AsRef<Path>>(path: P) -> Result<Vec<ClipRef>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("bad split record on line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}
