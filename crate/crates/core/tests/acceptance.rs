//! Acceptance gate: one test per release criterion, each printing a single
//! pass/fail line (visible under `--nocapture`; a failure also panics with
//! the same message).

use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use birdprobe::curate::{
    check_constraints, curate_pretrain, sample_fewshot, CurationConfig, RecordingMeta,
};
use birdprobe::featmap::FeatureMap;
use birdprobe::frontend::{fbank, pipeline, Waveform, N_MELS, TARGET_FRAMES};
use birdprobe::metrics::{auroc, average_precision, oracle};
use birdprobe::ndgrad::{grad_check, Tensor};
use birdprobe::probes::{
    asymmetric_loss, orthogonality_loss, param_count, probe_batch_logits, proto_similarities,
    write_head, Probe, ProbeKind, ProbeVars, DEFAULT_CLIP, DEFAULT_GAMMA_NEG, DEFAULT_GAMMA_POS,
};
use birdprobe::trainer::{evaluate, train_probe, TrainConfig, TrainSample};

fn report(n: usize, what: &str, outcome: Result<(), String>) {
    match outcome {
        Ok(()) => println!("criterion {n:2} ({what}): PASS"),
        Err(msg) => {
            println!("criterion {n:2} ({what}): FAIL — {msg}");
            panic!("criterion {n} ({what}) failed: {msg}");
        }
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_fmap(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> FeatureMap {
    FeatureMap::new(h, w, d, gaussian_vec(rng, h * w * d)).unwrap()
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_01_parameter_accounting() {
    let start = Instant::now();
    let run = || -> Result<(), String> {
        let table = [
            (ProbeKind::Linear, 21_525u64),
            (ProbeKind::Mlp, 535_573),
            (ProbeKind::Attentive, 2_119_701),
            (ProbeKind::Proto, 430_521),
        ];
        for (kind, want) in table {
            let got = param_count(kind, 1024, 21, 512, 20);
            if got != want {
                return Err(format!("{kind:?}: closed form {got}, expected {want}"));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..50 {
            let kind = table[i % 4].0;
            let c = rng.random_range(1..=8usize);
            let h = rng.random_range(1..=64usize);
            let j = rng.random_range(1..=8usize);
            let heads = [1usize, 2, 4][rng.random_range(0..3usize)];
            let d = match kind {
                ProbeKind::Attentive => heads * rng.random_range(1..=8usize),
                _ => rng.random_range(1..=64usize),
            };
            let probe = match kind {
                ProbeKind::Linear => Probe::new_linear(c, d, i as u64),
                ProbeKind::Mlp => Probe::new_mlp(c, d, h, i as u64),
                ProbeKind::Attentive => Probe::new_attentive(c, d, heads, i as u64).unwrap(),
                ProbeKind::Proto => Probe::new_proto(c, d, j, true, i as u64),
            };
            let enumerated: u64 = probe
                .param_tensors()
                .iter()
                .map(|t| t.data().len() as u64)
                .sum();
            let formula = param_count(kind, d as u64, c as u64, h as u64, j as u64);
            if enumerated != formula {
                return Err(format!(
                    "{kind:?} D={d} C={c} H={h} J={j}: enumerated {enumerated}, formula {formula}"
                ));
            }
        }
        if start.elapsed().as_secs_f64() >= 1.0 {
            return Err(format!("took {:.2}s, budget 1s", start.elapsed().as_secs_f64()));
        }
        Ok(())
    };
    report(1, "parameter accounting", run());
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_02_gradient_correctness() {
    let start = Instant::now();
    let run = || -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for i in 0..100 {
            let c = rng.random_range(1..=5usize);
            let probe = match i % 4 {
                0 => Probe::new_linear(c, rng.random_range(2..=12usize), i as u64),
                1 => Probe::new_mlp(
                    c,
                    rng.random_range(2..=12usize),
                    rng.random_range(2..=6usize),
                    i as u64,
                ),
                2 => Probe::new_attentive(c, 2 * rng.random_range(1..=4usize), 2, i as u64)
                    .unwrap(),
                _ => Probe::new_proto(
                    c,
                    rng.random_range(2..=8usize),
                    rng.random_range(1..=4usize),
                    i % 8 < 4,
                    i as u64,
                ),
            };
            let d = probe.input_dim();
            let batch = [random_fmap(&mut rng, 2, 2, d), random_fmap(&mut rng, 2, 2, d)];
            let label_bits: Vec<f64> = (0..2 * c)
                .map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 })
                .collect();
            let labels = Tensor::new(&[2, c], label_bits).unwrap();

            for idx in 0..probe.param_tensors().len() {
                let input = probe.param_tensors()[idx].clone();
                let probe_ref = &probe;
                let batch_ref = &batch;
                let labels_ref = &labels;
                let err = grad_check(
                    move |tape, x| {
                        let params = probe_ref
                            .param_tensors()
                            .into_iter()
                            .enumerate()
                            .map(|(k, t)| if k == idx { x } else { tape.constant(t.clone()) })
                            .collect();
                        let vars = ProbeVars { params };
                        let refs: Vec<&FeatureMap> = batch_ref.iter().collect();
                        let logits = probe_batch_logits(tape, probe_ref, &vars, &refs)?;
                        let mut loss = asymmetric_loss(
                            tape,
                            logits,
                            labels_ref,
                            DEFAULT_GAMMA_POS,
                            DEFAULT_GAMMA_NEG,
                            DEFAULT_CLIP,
                        )?;
                        if let Probe::Proto(h) = probe_ref {
                            loss = loss.add(&orthogonality_loss(tape, vars.params[0], h.c, h.j)?)?;
                        }
                        Ok(loss)
                    },
                    &input,
                    1e-5,
                )
                .map_err(|e| e.to_string())?;
                if !(err < 1e-4) {
                    return Err(format!(
                        "instance {i} ({:?}), param {idx}: max relative error {err:.3e}",
                        probe.kind()
                    ));
                }
            }
        }
        if start.elapsed().as_secs() >= 60 {
            return Err(format!("took {:?}, budget 60s", start.elapsed()));
        }
        Ok(())
    };
    report(2, "gradient correctness", run());
}

// ---------------------------------------------------------------- 3

/// Double-loop cosine/max reference for prototype scores.
fn proto_oracle(fm: &FeatureMap, bank: &birdprobe::probes::PrototypeBank) -> Vec<f64> {
    let p = fm.n_patches();
    let mut out = Vec::new();
    for cj in 0..bank.c * bank.j {
        let proto = &bank.prototypes.data()[cj * bank.d..(cj + 1) * bank.d];
        let pn = proto.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut best = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for t in 0..p {
            let patch = &fm.values[t * fm.d..(t + 1) * fm.d];
            let fnorm = patch.iter().map(|x| x * x).sum::<f64>().sqrt();
            let cos = if pn == 0.0 || fnorm == 0.0 {
                0.0
            } else {
                patch.iter().zip(proto).map(|(a, b)| a * b).sum::<f64>() / (pn * fnorm)
            };
            best = best.max(cos);
            sum += cos;
        }
        out.push(if bank.focal { best - sum / p as f64 } else { best });
    }
    out
}

#[test]
fn criterion_03_prototype_scoring_semantics() {
    let run = || -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for i in 0..1000u64 {
            let c = rng.random_range(1..=4usize);
            let j = rng.random_range(1..=3usize);
            let d = rng.random_range(2..=8usize);
            let Probe::Proto(bank) = Probe::new_proto(c, d, j, i % 2 == 0, i) else {
                unreachable!()
            };
            let fm = random_fmap(&mut rng, 2, 3, d);
            let fast = proto_similarities(&fm, &bank).map_err(|e| e.to_string())?;
            let slow = proto_oracle(&fm, &bank);
            for (k, (a, b)) in fast.iter().zip(&slow).enumerate() {
                if (a - b).abs() > 1e-12 {
                    return Err(format!("map {i} score {k}: fast {a}, oracle {b}"));
                }
            }
        }

        // Scale invariance is checked bit-for-bit on one-hot patch
        // embeddings: rescaling a single nonzero coordinate never changes
        // its sign, so the normalized patch (a signed basis vector) is
        // reproduced exactly at any scale.
        for i in 0..100u64 {
            let d = 6;
            let Probe::Proto(bank) = Probe::new_proto(3, d, 2, true, i) else { unreachable!() };
            let values: Vec<f64> = (0..6usize)
                .flat_map(|_| {
                    let hot = rng.random_range(0..d);
                    let v = (rng.random::<f64>() + 0.5) * if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
                    (0..d).map(move |k| if k == hot { v } else { 0.0 })
                })
                .collect();
            let fm = FeatureMap::new(2, 3, d, values.clone()).unwrap();
            let base = proto_similarities(&fm, &bank).map_err(|e| e.to_string())?;
            for lambda in [0.1, 10.0] {
                let scaled = FeatureMap::new(
                    2,
                    3,
                    d,
                    values.iter().map(|v| v * lambda).collect(),
                )
                .unwrap();
                let got = proto_similarities(&scaled, &bank).map_err(|e| e.to_string())?;
                for (k, (a, b)) in base.iter().zip(&got).enumerate() {
                    if a.to_bits() != b.to_bits() {
                        return Err(format!(
                            "map {i}, lambda {lambda}, score {k}: {a:?} vs {b:?} not bit-identical"
                        ));
                    }
                }
            }
        }
        Ok(())
    };
    report(3, "prototype scoring semantics", run());
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_04_initialization_contract() {
    let run = || -> Result<(), String> {
        let probe = Probe::new_proto(21, 64, 20, true, 0);
        let fm = FeatureMap::new(2, 2, 64, vec![0.0; 4 * 64]).unwrap();
        let logits = probe.logits(&fm).map_err(|e| e.to_string())?;
        for (c, z) in logits.iter().enumerate() {
            let p = 1.0 / (1.0 + (-z).exp());
            if (p - 0.11920).abs() > 1e-5 {
                return Err(format!("class {c}: fresh-head probability {p}, expected 0.11920"));
            }
        }
        Ok(())
    };
    report(4, "initialization contract", run());
}

// ---------------------------------------------------------------- 5 & 6 shared data

const GAP_C: usize = 8;
const GAP_D: usize = 32;
const GAP_PATCHES: usize = 8 * 32;

/// One unit signature direction per class.
fn gap_signatures() -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    (0..GAP_C)
        .map(|_| {
            let mut v = gaussian_vec(&mut rng, GAP_D);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            v
        })
        .collect()
}

/// Balanced single-label samples on an 8×32 grid: background noise
/// everywhere except one random patch holding the class signature, so
/// global averaging dilutes the evidence 256-fold. Each sample's
/// background patches share one random direction (with per-patch jitter);
/// the average is dominated by that nuisance direction while the single
/// evidence patch stays findable by max-pooled cosine scoring.
fn gap_samples(per_class: usize, seed: u64) -> Vec<TrainSample> {
    let sigs = gap_signatures();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..per_class {
        for class in 0..GAP_C {
            let background = gaussian_vec(&mut rng, GAP_D);
            let mut values = Vec::with_capacity(GAP_PATCHES * GAP_D);
            for _ in 0..GAP_PATCHES {
                for &b in &background {
                    values.push(b + 0.05 * rng.sample::<f64, _>(StandardNormal));
                }
            }
            let patch = rng.random_range(0..GAP_PATCHES);
            values[patch * GAP_D..(patch + 1) * GAP_D].copy_from_slice(&sigs[class]);
            let mut labels = vec![0u8; GAP_C];
            labels[class] = 1;
            out.push(TrainSample {
                fm: FeatureMap::new(8, 32, GAP_D, values).unwrap(),
                labels,
            });
        }
    }
    out
}

fn gap_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 30,
        batch_size: 8,
        lr: 1e-2,
        prototype_lr: 4e-2,
        seed,
        ..TrainConfig::default()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_05_probing_gap() {
    let start = Instant::now();
    let run = || -> Result<(), String> {
        let eval_set = gap_samples(8, 900);
        let mut proto_maps = Vec::new();
        let mut linear_maps = Vec::new();
        for seed in 0..3u64 {
            let train = gap_samples(12, 100 + seed);

            let mut proto = Probe::new_proto(GAP_C, GAP_D, 4, true, seed);
            train_probe(&mut proto, &train, None, &gap_config(seed)).map_err(|e| e.to_string())?;
            proto_maps.push(evaluate(&proto, &eval_set).map_err(|e| e.to_string())?.map);

            let mut linear = Probe::new_linear(GAP_C, GAP_D, seed);
            train_probe(&mut linear, &train, None, &gap_config(seed)).map_err(|e| e.to_string())?;
            linear_maps.push(evaluate(&linear, &eval_set).map_err(|e| e.to_string())?.map);
        }
        let proto_map = mean(&proto_maps);
        let linear_map = mean(&linear_maps);
        if proto_map < 0.90 {
            return Err(format!("prototypical mAP {proto_map:.4} (per-seed {proto_maps:?}) < 0.90"));
        }
        if linear_map > 0.60 {
            return Err(format!("linear mAP {linear_map:.4} (per-seed {linear_maps:?}) > 0.60"));
        }
        if start.elapsed().as_secs() >= 300 {
            return Err(format!("took {:?}, budget 5 min", start.elapsed()));
        }
        println!("  probing gap: proto mAP {proto_map:.4} vs linear mAP {linear_map:.4}");
        Ok(())
    };
    report(5, "probing gap", run());
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_06_fewshot_monotonicity() {
    let start = Instant::now();
    let run = || -> Result<(), String> {
        let full_train = gap_samples(12, 100);
        let eval_set = gap_samples(8, 900);

        let mut full = Probe::new_proto(GAP_C, GAP_D, 4, true, 0);
        train_probe(&mut full, &full_train, None, &gap_config(0)).map_err(|e| e.to_string())?;
        let full_map = evaluate(&full, &eval_set).map_err(|e| e.to_string())?.map;

        let by_class: Vec<Vec<usize>> = (0..GAP_C)
            .map(|c| {
                full_train
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.labels[c] == 1)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();

        let mut means = Vec::new();
        for k in [1usize, 5, 10] {
            let mut maps = Vec::new();
            for subset in 0..3u64 {
                let mut pick = ChaCha8Rng::seed_from_u64(7000 + subset);
                let mut chosen = Vec::new();
                for ids in &by_class {
                    let mut ids = ids.clone();
                    for take in 0..k.min(ids.len()) {
                        let at = pick.random_range(take..ids.len());
                        ids.swap(take, at);
                        chosen.push(ids[take]);
                    }
                }
                let subset_data: Vec<TrainSample> =
                    chosen.iter().map(|&i| full_train[i].clone()).collect();
                for seed in 0..3u64 {
                    let mut probe = Probe::new_proto(GAP_C, GAP_D, 4, true, seed);
                    train_probe(&mut probe, &subset_data, None, &gap_config(seed))
                        .map_err(|e| e.to_string())?;
                    maps.push(evaluate(&probe, &eval_set).map_err(|e| e.to_string())?.map);
                }
            }
            means.push(mean(&maps));
        }

        if !(means[0] <= means[1] && means[1] <= means[2]) {
            return Err(format!("mAP not non-decreasing over k=1,5,10: {means:?}"));
        }
        if means[2] < 0.85 * full_map {
            return Err(format!(
                "10-shot mAP {:.4} < 85% of full-data mAP {full_map:.4}",
                means[2]
            ));
        }
        if start.elapsed().as_secs() >= 600 {
            return Err(format!("took {:?}, budget 10 min", start.elapsed()));
        }
        println!(
            "  few-shot means k=1/5/10: {:.4}/{:.4}/{:.4}, full {full_map:.4}",
            means[0], means[1], means[2]
        );
        Ok(())
    };
    report(6, "few-shot monotonicity", run());
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_07_metric_oracles() {
    let run = || -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for i in 0..1000 {
            let n = rng.random_range(1..=50usize);
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
            let pairs = [
                ("AP", average_precision(&scores, &labels), oracle::average_precision(&scores, &labels)),
                ("AUROC", auroc(&scores, &labels), oracle::auroc(&scores, &labels)),
            ];
            for (name, fast, slow) in pairs {
                match (fast, slow) {
                    (None, None) => {}
                    (Some(a), Some(b)) if (a - b).abs() <= 1e-12 => {}
                    other => return Err(format!("instance {i} {name}: fast/oracle disagree {other:?}")),
                }
            }
        }

        let n = 10_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let base = auroc(&scores, &labels).unwrap();
        if (base - 0.5).abs() > 0.02 {
            return Err(format!("random-score AUROC {base} outside 0.5 ± 0.02"));
        }

        let worked = [
            (average_precision(&[0.9, 0.1, 0.8], &[1, 0, 1]), 1.0),
            (average_precision(&[0.1, 0.9], &[1, 0]), 0.5),
            (average_precision(&[0.3, 0.2], &[1, 1]), 1.0),
            (auroc(&[0.9, 0.8, 0.1], &[1, 1, 0]), 1.0),
            (auroc(&[0.4, 0.4, 0.4], &[1, 0, 1]), 0.5),
            (auroc(&[0.1, 0.9], &[1, 0]), 0.0),
        ];
        for (k, (got, want)) in worked.iter().enumerate() {
            if got.expect("defined") != *want {
                return Err(format!("worked example {k}: got {got:?}, want {want}"));
            }
        }
        Ok(())
    };
    report(7, "metric oracles", run());
}

// ---------------------------------------------------------------- 8

fn random_corpus(rng: &mut ChaCha8Rng, id_base: usize) -> Vec<RecordingMeta> {
    let n_species = rng.random_range(2..=6usize);
    let n_recordings = rng.random_range(1..=30usize);
    (0..n_recordings)
        .map(|r| {
            let duration = rng.random_range(30.0..60.0);
            let n_events = rng.random_range(1..=8usize);
            let events = (0..n_events)
                .map(|_| {
                    let start = rng.random::<f64>() * (duration - 2.0);
                    (start, start + 0.5 + rng.random::<f64>())
                })
                .collect();
            RecordingMeta {
                recording_id: format!("rec{id_base}_{r}"),
                species: format!("sp{}", rng.random_range(0..n_species)),
                secondary_species: vec![],
                duration_s: duration,
                events,
            }
        })
        .collect()
}

#[test]
fn criterion_08_curation_constraints() {
    let run = || -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        for i in 0..200 {
            let metas = random_corpus(&mut rng, i);
            let cfg = CurationConfig {
                max_events_per_species: rng.random_range(3..=50usize),
                max_events_per_recording: rng.random_range(1..=4usize),
                min_events_per_recording: 1,
                seed: i as u64,
            };
            let selection = curate_pretrain(&metas, &cfg).map_err(|e| e.to_string())?;
            check_constraints(&metas, &cfg, &selection)
                .map_err(|e| format!("corpus {i}: {e}"))?;
        }

        // redundancy profile: many recordings whose event counts spread
        // uniformly over 1..=6, so a per-recording cap of 2 keeps
        // sum(min(n,2))/sum(n) = 11/21 of the events
        let mut metas = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(888);
        for s in 0..40 {
            for r in 0..30 {
                let n_events = rng.random_range(1..=6usize);
                metas.push(RecordingMeta {
                    recording_id: format!("hv{s}_{r}"),
                    species: format!("sp{s}"),
                    secondary_species: vec![],
                    duration_s: 100.0,
                    events: (0..n_events).map(|e| (2.0 * e as f64, 2.0 * e as f64 + 1.0)).collect(),
                });
            }
        }
        let total: usize = metas.iter().map(|m| m.events.len()).sum();
        let cfg = CurationConfig {
            max_events_per_species: 500,
            max_events_per_recording: 2,
            min_events_per_recording: 1,
            seed: 0,
        };
        let kept = curate_pretrain(&metas, &cfg).map_err(|e| e.to_string())?.len();
        let ratio = kept as f64 / total as f64;
        if !(0.45..=0.55).contains(&ratio) {
            return Err(format!("caps (500, 2) keep ratio {ratio:.3} outside 0.45..0.55"));
        }
        Ok(())
    };
    report(8, "curation constraints", run());
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_09_fewshot_sampler() {
    let run = || -> Result<(), String> {
        // plenty of eligible recordings: exactly k per class
        let mut metas = Vec::new();
        for s in 0..5 {
            for r in 0..12 {
                metas.push(RecordingMeta {
                    recording_id: format!("fs{s}_{r}"),
                    species: format!("sp{s}"),
                    secondary_species: vec![],
                    duration_s: 4.0,
                    events: vec![(0.2, 1.0), (2.0, 3.0)],
                });
            }
        }
        let split = sample_fewshot(&metas, 5, 3).map_err(|e| e.to_string())?;
        for s in 0..5 {
            let count = split
                .iter()
                .filter(|c| c.labels == [format!("sp{s}")])
                .count();
            if count != 5 {
                return Err(format!("species sp{s}: {count} clips, expected exactly 5"));
            }
        }
        let again = sample_fewshot(&metas, 5, 3).map_err(|e| e.to_string())?;
        if split != again {
            return Err("same seed produced different splits".to_string());
        }
        let mut seen = HashSet::new();
        for c in &split {
            if !seen.insert((c.recording_id.clone(), c.event_index)) {
                return Err(format!("event reused: {} #{}", c.recording_id, c.event_index));
            }
        }

        // scarce class: fewer than k allowed
        let scarce = vec![
            RecordingMeta {
                recording_id: "only_a".to_string(),
                species: "rare".to_string(),
                secondary_species: vec![],
                duration_s: 3.0,
                events: vec![(0.5, 1.0)],
            },
            RecordingMeta {
                recording_id: "only_b".to_string(),
                species: "rare".to_string(),
                secondary_species: vec![],
                duration_s: 3.0,
                events: vec![(1.0, 2.0)],
            },
        ];
        let split = sample_fewshot(&scarce, 5, 0).map_err(|e| e.to_string())?;
        if split.len() != 2 {
            return Err(format!("scarce class: {} clips, expected the 2 available", split.len()));
        }
        Ok(())
    };
    report(9, "few-shot sampler", run());
}

// ---------------------------------------------------------------- 10

#[test]
fn criterion_10_frontend_geometry() {
    let run = || -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(1010);
        let five_s = 5 * 32_000;
        let waves = [
            (0..five_s)
                .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 32_000.0).sin() as f32)
                .collect::<Vec<f32>>(),
            (0..five_s).map(|_| rng.random::<f32>() - 0.5).collect(),
            (0..five_s).map(|_| 1e-4 * (rng.random::<f32>() - 0.5)).collect(),
        ];
        for (i, samples) in waves.into_iter().enumerate() {
            let wave = Waveform::new(samples, 32_000).map_err(|e| e.to_string())?;
            let raw = fbank(&wave, N_MELS, 25.0, 10.0).map_err(|e| e.to_string())?;
            if raw.frames != 498 {
                return Err(format!("wave {i}: 160000 samples gave {} raw frames, expected 498", raw.frames));
            }
            let spec = pipeline(&wave).map_err(|e| e.to_string())?;
            if spec.n_mels != 128 || spec.frames != TARGET_FRAMES || !spec.normalized {
                return Err(format!(
                    "wave {i}: pipeline gave {}x{} (normalized={}), expected 128x512 normalized",
                    spec.n_mels, spec.frames, spec.normalized
                ));
            }
        }
        Ok(())
    };
    report(10, "frontend geometry", run());
}

// ---------------------------------------------------------------- 11

#[test]
fn criterion_11_training_determinism() {
    let run = || -> Result<(), String> {
        let data = gap_samples(2, 55);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut checkpoints = Vec::new();
        for (i, threads) in ["1", "4", "16"].iter().enumerate() {
            std::env::set_var("BMAE_THREADS", threads);
            let mut probe = Probe::new_proto(GAP_C, GAP_D, 2, true, 7);
            train_probe(&mut probe, &data, None, &cfg).map_err(|e| e.to_string())?;
            let path = dir.path().join(format!("run{i}.bmph"));
            write_head(&path, &probe).map_err(|e| e.to_string())?;
            checkpoints.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        std::env::remove_var("BMAE_THREADS");
        if checkpoints[0] != checkpoints[1] || checkpoints[1] != checkpoints[2] {
            return Err("checkpoints differ across runs / thread settings".to_string());
        }
        Ok(())
    };
    report(11, "training determinism", run());
}
