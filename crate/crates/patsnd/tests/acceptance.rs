//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::Value;

use patsnd::cli::classifier_f1;
use patsnd::{CachedEncoder, Checkpoint, EncoderSpec};
use patsnd_core::contrastive::{ContrastiveGenerator, TripleKey};
use patsnd_core::dsbuild::{align, split};
use patsnd_core::evaluation::auc;
use patsnd_core::kb::SourceProperty;
use patsnd_core::pat::FeatureMatrices;
use patsnd_core::relclf::{train_relation_classifier, ClassifierConfig};
use patsnd_core::synthetic::{generate, SyntheticConfig, TYPE_PROPERTY};
use patsnd_core::training::{batch_objective, hinge_loss, PreparedKb};
use patsnd_core::{
    seeded_rng, CorpusSentence, EntityRecord, Error, HashedTrigramEncoder, InstanceLabel,
    KnowledgeBase, Mention, RelationParams, RelationSource, SnsModel, Span, TrainConfig, Triple,
    TripleLabel,
};

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok_or<T, E: std::fmt::Display>(r: Result<T, E>, what: &str) -> Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

// ---------------------------------------------------------------------------
// Synthetic pipeline, driven through the binary.

struct Pipeline {
    entities: usize,
    relations: usize,
    train: usize,
    test_normal: usize,
    test_novel: usize,
    typed: bool,
    seconds: f64,
    losses: Vec<f64>,
    eval: Value,
}

fn pat_snd(cache: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pat-snd"))
        .args(args)
        .env("PAT_SND_CACHE_DIR", cache)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| format!("spawn pat-snd: {e}"))?;
    ensure(out.status.success(), || {
        format!(
            "pat-snd {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        )
    })
}

fn jsonl(path: &Path) -> Result<Vec<Value>, String> {
    let text = ok_or(std::fs::read_to_string(path), &path.display().to_string())?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| ok_or(serde_json::from_str(l), &path.display().to_string()))
        .collect()
}

fn run_pipeline() -> Result<Pipeline, String> {
    let dir = ok_or(tempfile::tempdir(), "tempdir")?;
    let d = dir.path();
    let cache = d.join("cache");
    ok_or(std::fs::create_dir_all(&cache), "cache dir")?;
    let p = |name: &str| d.join(name).display().to_string();
    let kb = p("kb.jsonl");
    let rel = p("relations.jsonl");

    let start = Instant::now();
    pat_snd(&cache, &["--seed", "0", "gen-synthetic", "--out", &p("")])?;
    pat_snd(
        &cache,
        &[
            "train", "--kb", &kb, "--relations", &rel, "--dataset", &p("train.jsonl"),
            "--config", &p("train.cfg"), "--checkpoint", &p("model.ckpt"), "--out",
            &p("train_log.jsonl"),
        ],
    )?;
    pat_snd(
        &cache,
        &[
            "--seed", "0", "evaluate", "--kb", &kb, "--relations", &rel, "--dataset",
            &p("test.jsonl"), "--checkpoint", &p("model.ckpt"), "--oracle-relations",
            "--annotations", &p("annotations.jsonl"), "--out", &p("eval.json"),
        ],
    )?;
    let seconds = start.elapsed().as_secs_f64();

    let entities = jsonl(&d.join("kb.jsonl"))?;
    let typed = entities.iter().all(|e| {
        e["properties"]
            .as_array()
            .is_some_and(|ps| ps.iter().any(|p| p["pid"] == TYPE_PROPERTY))
    });
    let test = jsonl(&d.join("test.jsonl"))?;
    let count = |label: &str| test.iter().filter(|t| t["label"] == label).count();
    let losses = jsonl(&d.join("train_log.jsonl"))?
        .iter()
        .map(|l| l["mean_loss"].as_f64().unwrap_or(f64::NAN))
        .collect();
    let eval: Value = ok_or(
        serde_json::from_str(&ok_or(std::fs::read_to_string(d.join("eval.json")), "eval.json")?),
        "eval.json",
    )?;
    Ok(Pipeline {
        entities: entities.len(),
        relations: jsonl(&d.join("relations.jsonl"))?.len(),
        train: jsonl(&d.join("train.jsonl"))?.len(),
        test_normal: count("NORMAL"),
        test_novel: count("NOVEL"),
        typed,
        seconds,
        losses,
        eval,
    })
}

fn criterion_1(p: &Result<Pipeline, String>) -> Check {
    let p = p.as_ref().map_err(Clone::clone)?;
    ensure(p.relations >= 4 && p.entities >= 200 && p.typed, || {
        format!("benchmark has {} relations, {} entities, typed={}", p.relations, p.entities, p.typed)
    })?;
    ensure(p.train == 2000 && p.test_normal == 200 && p.test_novel == 200, || {
        format!("split {}/{}+{}", p.train, p.test_normal, p.test_novel)
    })?;
    let auc = p.eval["auc"].as_f64().ok_or("no auc in eval.json")?;
    let decreasing = p.losses.len() >= 3 && p.losses[1] < p.losses[0] && p.losses[2] < p.losses[1];
    let detail = format!(
        "AUC {auc:.4} (>= 0.95), {:.1}s (<= 300s), first losses {:.4} {:.4} {:.4}",
        p.seconds,
        p.losses.first().copied().unwrap_or(f64::NAN),
        p.losses.get(1).copied().unwrap_or(f64::NAN),
        p.losses.get(2).copied().unwrap_or(f64::NAN),
    );
    ensure(auc >= 0.95 && p.seconds <= 300.0 && decreasing, || detail.clone())?;
    Ok(detail)
}

fn criterion_2(p: &Result<Pipeline, String>) -> Check {
    let p = p.as_ref().map_err(Clone::clone)?;
    let top2 = p.eval["ncs"]["2"].as_f64().ok_or("no NCS top-2")?;
    let random1 = p.eval["ncs_random"]["1"].as_f64().ok_or("no random NCS top-1")?;
    let detail = format!("NCS top-2 {top2:.3} (>= 0.80), random top-1 {random1:.3} (<= 0.35)");
    ensure(top2 >= 0.80 && random1 <= 0.35, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------

fn criterion_3() -> Check {
    let bench = ok_or(
        generate(&SyntheticConfig {
            seed: 11,
            ..SyntheticConfig::default()
        }),
        "generate",
    )?;
    let encoder = CachedEncoder::new(HashedTrigramEncoder::default());
    let catalog = bench.relation_ids();
    let model = ok_or(
        train_relation_classifier(&bench.train, &catalog, &encoder, &ClassifierConfig::default()),
        "train",
    )?;
    let f1 = ok_or(
        classifier_f1(&RelationSource::Classifier(model), &bench.test, &encoder),
        "predict",
    )?;
    let detail = format!("macro F1 {f1:.4} (>= 0.90) on {} held-out instances", bench.test.len());
    ensure(f1 >= 0.90, || detail.clone())?;
    Ok(detail)
}

fn random_matrix<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn criterion_4() -> Check {
    let mut rng = seeded_rng(4);
    let fixtures = 1000;
    let mut worst_sum = 0.0f64;
    for f in 0..fixtures {
        let n = rng.gen_range(1..=12);
        let d = rng.gen_range(1..=6);
        let k = rng.gen_range(1..=4);
        let mut rp = RelationParams::random(d, k, &mut rng);
        let sharpen = rng.gen_range(0.1..20.0);
        rp.head_weights.iter_mut().for_each(|w| *w *= sharpen);
        let p = random_matrix(&mut rng, n * d, 3.0);
        let v = random_matrix(&mut rng, n * d, 3.0);

        let a = ok_or(rp.attention_weights(&p), "attention")?;
        let h = ok_or(rp.pat_forward(&p, &v), "forward")?;
        let sum: f64 = a.iter().sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());
        ensure((sum - 1.0).abs() <= 1e-6, || format!("fixture {f}: sum {sum}"))?;
        ensure(a.iter().all(|x| (0.0..=1.0).contains(x)), || format!("fixture {f}: weight outside [0,1]"))?;

        // h is the convex combination of the value rows under `a`.
        for j in 0..d {
            let column = (0..n).map(|i| v[i * d + j]);
            let (lo, hi) = column.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
            let combo: f64 = column.zip(&a).map(|(x, w)| x * w).sum();
            ensure(h[j] >= lo - 1e-12 && h[j] <= hi + 1e-12, || format!("fixture {f}: h[{j}] outside hull"))?;
            ensure((combo - h[j]).abs() <= 1e-9, || format!("fixture {f}: h[{j}] is not the weighted sum"))?;
        }

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permute = |m: &[f64]| -> Vec<f64> { perm.iter().flat_map(|&i| m[i * d..(i + 1) * d].to_vec()).collect() };
        let ap = ok_or(rp.attention_weights(&permute(&p)), "attention")?;
        let hp = ok_or(rp.pat_forward(&permute(&p), &permute(&v)), "forward")?;
        for (j, &i) in perm.iter().enumerate() {
            ensure(ap[j].to_bits() == a[i].to_bits(), || format!("fixture {f}: weights not equivariant"))?;
        }
        ensure(hp.iter().zip(&h).all(|(x, y)| x.to_bits() == y.to_bits()), || format!("fixture {f}: summary changed under permutation"))?;
    }
    Ok(format!("{fixtures} fixtures, max |sum - 1| = {worst_sum:.2e}, equivariance bit-exact"))
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central differences of `f` over every parameter of `model`, compared
/// against `grads`. Returns the worst relative error.
fn compare_gradient(model: &SnsModel, grads: &SnsModel, f: impl Fn(&SnsModel) -> f64) -> f64 {
    let step = 1e-5;
    let mut worst = 0.0f64;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    for (t, g) in analytic.iter().enumerate() {
        for (i, &analytic) in g.iter().enumerate() {
            let mut plus = model.clone();
            plus.tensors_mut()[t][i] += step;
            let mut minus = model.clone();
            minus.tensors_mut()[t][i] -= step;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * step);
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    worst
}

fn tiny_kb<R: Rng>(rng: &mut R, entities: usize) -> Result<KnowledgeBase, String> {
    let mut kb = KnowledgeBase::new();
    let words = ["film", "human", "actor", "city", "guitar", "award", "chess", "party"];
    for e in 0..entities {
        let props: Vec<SourceProperty> = (0..rng.gen_range(1..4))
            .map(|j| SourceProperty {
                pid: format!("P{}", rng.gen_range(1..6)),
                plabel: format!("property {j}"),
                values: vec![words.choose(rng).unwrap().to_string()],
            })
            .collect();
        let record = ok_or(EntityRecord::from_source(format!("Q{e}"), format!("entity {e}"), "", &props), "record")?;
        ok_or(kb.insert_entity(record), "insert")?;
    }
    Ok(kb)
}

fn criterion_5() -> Check {
    let mut rng = seeded_rng(5);
    let relations = vec!["r1".to_string(), "r2".to_string()];
    let (dim_f, dim_h, heads) = (5, 3, 2);
    let mut worst = 0.0f64;
    let score_fixtures = 25;
    for _ in 0..score_fixtures {
        let model = SnsModel::random(dim_f, dim_h, heads, relations.clone(), &mut rng);
        let feats = |rng: &mut patsnd_core::SeededRng| {
            let rows = rng.gen_range(1..=4);
            FeatureMatrices {
                fp: random_matrix(rng, rows * dim_f, 1.0),
                fv: random_matrix(rng, rows * dim_f, 1.0),
                rows,
            }
        };
        let (f1, f2) = (feats(&mut rng), feats(&mut rng));
        let rel = relations.choose(&mut rng).unwrap().clone();
        let (_, grads) = ok_or(model.score_with_gradient(&rel, &f1, &f2), "gradient")?;
        let score = |m: &SnsModel| {
            let m1 = f1.project(&m.projection).unwrap();
            let m2 = f2.project(&m.projection).unwrap();
            m.score_matrices(&rel, &m1, &m2).unwrap()
        };
        worst = worst.max(compare_gradient(&model, &grads, score));
    }

    // The batch objective: hinge over (normal, pseudo-novel) pairs plus L2.
    let encoder = HashedTrigramEncoder::new(dim_f, 2);
    let objective_fixtures = 20;
    let mut done = 0;
    while done < objective_fixtures {
        let kb = tiny_kb(&mut rng, 5)?;
        let prepared = ok_or(PreparedKb::build(&kb, &encoder), "prepare")?;
        let model = SnsModel::random(dim_f, dim_h, heads, relations.clone(), &mut rng);
        let pairs: Vec<(Triple, Triple)> = (0..3)
            .map(|_| {
                let mut ids: Vec<usize> = (0..5).collect();
                ids.shuffle(&mut rng);
                let r = relations.choose(&mut rng).unwrap();
                (
                    Triple::normal(format!("Q{}", ids[0]), r.as_str(), format!("Q{}", ids[1])),
                    Triple::new(format!("Q{}", ids[0]), r.as_str(), format!("Q{}", ids[2]), TripleLabel::PseudoNovel),
                )
            })
            .collect();
        let margin = rng.gen_range(0.0..2.0);
        // Central differences are meaningless across a hinge kink.
        let s = |t: &Triple| -model.novelty_score(&t.e1, &t.relation_id, &t.e2, &kb, &encoder).unwrap();
        if pairs.iter().any(|(pos, neg)| (s(neg) - s(pos) + margin).abs() < 1e-3) {
            continue;
        }
        let (_, grads) = ok_or(batch_objective(&model, &prepared, &pairs, margin, 1e-2), "objective")?;
        let objective = |m: &SnsModel| batch_objective(m, &prepared, &pairs, margin, 1e-2).unwrap().0;
        worst = worst.max(compare_gradient(&model, &grads, objective));
        done += 1;
    }
    let detail = format!(
        "{score_fixtures} score + {objective_fixtures} objective fixtures, max relative error {worst:.2e} (<= 1e-3)"
    );
    ensure(worst <= 1e-3, || detail.clone())?;
    Ok(detail)
}

fn criterion_6() -> Check {
    let h = |a, b, m| hinge_loss(a, b, m).map_err(|e| e.to_string());
    ensure(h(2.0, 0.0, 1.0)? == 0.0, || "margin satisfied".into())?;
    for x in [-7.5, -1.0, 0.0, 0.3, 2.0, 1e6] {
        ensure(h(x, x, 1.0)? == 1.0, || format!("tie at {x}"))?;
    }
    ensure(h(0.0, 2.0, 1.0)? == 3.0, || "direct substitution".into())?;
    ensure(hinge_loss(f64::NAN, 0.0, 1.0).is_err(), || "NaN accepted".into())?;
    Ok("(2,0,1) -> 0, (x,x,1) -> 1, (0,2,1) -> 3".into())
}

fn brute_force_auc(scores: &[f64], labels: &[InstanceLabel]) -> f64 {
    let (mut doubled, mut pairs) = (0u64, 0u64);
    for (s, l) in scores.iter().zip(labels) {
        if *l != InstanceLabel::Novel {
            continue;
        }
        for (t, m) in scores.iter().zip(labels) {
            if *m == InstanceLabel::Normal {
                pairs += 1;
                doubled += if s > t { 2 } else if s == t { 1 } else { 0 };
            }
        }
    }
    doubled as f64 / (2 * pairs) as f64
}

fn criterion_7() -> Check {
    use InstanceLabel::{Normal, Novel};
    let hand = ok_or(auc(&[0.9, 0.4, 0.6, 0.1], &[Novel, Novel, Normal, Normal]), "auc")?;
    ensure(hand == 0.75, || format!("hand case gave {hand}"))?;
    let mut rng = seeded_rng(7);
    for case in 0..100 {
        let n = rng.gen_range(2..=200);
        let coarse = rng.gen_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| if coarse { rng.gen_range(0..5) as f64 } else { rng.gen_range(-1.0..1.0) })
            .collect();
        let mut labels: Vec<InstanceLabel> =
            (0..n).map(|_| if rng.gen_bool(0.4) { Novel } else { Normal }).collect();
        labels[0] = Novel;
        labels[1] = Normal;
        let got = ok_or(auc(&scores, &labels), "auc")?;
        let want = brute_force_auc(&scores, &labels);
        ensure(got == want, || format!("case {case}: {got} vs brute force {want}"))?;
    }
    Ok("hand case 0.75, 100 random cases equal brute force exactly".into())
}

fn criterion_8() -> Check {
    let mut kb = KnowledgeBase::new();
    for id in ["A", "B", "C"] {
        let record = ok_or(EntityRecord::from_source(id, format!("entity {id}"), "", &[]), "record")?;
        ok_or(kb.insert_entity(record), "insert")?;
    }
    let ids = ["A", "B", "C"];
    let mut rng = seeded_rng(8);
    let mut configurations = 0;
    for &e1 in &ids {
        for &e2 in &ids {
            if e1 == e2 {
                continue;
            }
            let third = ids.iter().find(|&&x| x != e1 && x != e2).unwrap();
            let candidates: [TripleKey; 2] = [
                (third.to_string(), "r".into(), e2.to_string()),
                (e1.to_string(), "r".into(), third.to_string()),
            ];
            for mask in 0..4u8 {
                let mut train = vec![Triple::normal(e1, "r", e2)];
                for (bit, c) in candidates.iter().enumerate() {
                    if mask & (1 << bit) != 0 {
                        train.push(Triple::normal(c.0.as_str(), "r", c.2.as_str()));
                    }
                }
                for filter in [true, false] {
                    configurations += 1;
                    let generator = ContrastiveGenerator::new(&kb, &train).with_filter(filter);
                    let known: BTreeSet<TripleKey> = train.iter().map(Triple::key).collect();
                    let allowed: BTreeSet<TripleKey> = candidates
                        .iter()
                        .filter(|c| !filter || !known.contains(*c))
                        .cloned()
                        .collect();
                    let original = Triple::normal(e1, "r", e2);
                    if allowed.is_empty() {
                        let r = generator.corrupt(&original, &mut rng);
                        ensure(matches!(r, Err(Error::CorruptionExhausted(_))), || {
                            format!("{e1}->{e2} mask {mask}: expected exhaustion, got {r:?}")
                        })?;
                        continue;
                    }
                    let mut seen = BTreeSet::new();
                    for _ in 0..200 {
                        let t = ok_or(generator.corrupt(&original, &mut rng), "corrupt")?;
                        let changed = (t.e1 != e1) as u8 + (t.e2 != e2) as u8;
                        ensure(changed == 1, || format!("{t:?} changes {changed} slots"))?;
                        ensure(t.relation_id == "r" && t.label == TripleLabel::PseudoNovel, || format!("{t:?}"))?;
                        ensure(t.e1 != t.e2, || format!("{t:?} is a self-pair"))?;
                        seen.insert(t.key());
                    }
                    ensure(seen == allowed, || {
                        format!("{e1}->{e2} mask {mask} filter {filter}: saw {seen:?}, allowed {allowed:?}")
                    })?;
                }
            }
        }
    }
    Ok(format!("{configurations} configurations match exhaustive enumeration"))
}

fn random_corpus<R: Rng>(rng: &mut R) -> (Vec<CorpusSentence>, Vec<TripleKey>) {
    let entities: Vec<String> = (0..rng.gen_range(3..10)).map(|i| format!("E{i}")).collect();
    let relations = ["p1", "p2", "p3"];
    let mut kr = Vec::new();
    for _ in 0..rng.gen_range(1..25) {
        let a = entities.choose(rng).unwrap();
        let b = entities.choose(rng).unwrap();
        if a != b {
            kr.push((a.clone(), relations.choose(rng).unwrap().to_string(), b.clone()));
        }
    }
    let mut corpus: Vec<CorpusSentence> = Vec::new();
    for _ in 0..rng.gen_range(1..=100) {
        if !corpus.is_empty() && rng.gen_bool(0.15) {
            let copy = corpus.choose(rng).unwrap().clone();
            corpus.push(copy);
            continue;
        }
        let mut text = String::new();
        let mut mentions = Vec::new();
        for _ in 0..rng.gen_range(0..6) {
            text.push_str(["so ", "and ", "then ", ""].choose(rng).unwrap());
            let e = entities.choose(rng).unwrap();
            let start = text.chars().count();
            text.push_str(&format!("{e}ë"));
            mentions.push(Mention::new(e.as_str(), Span::new(start, text.chars().count())));
            text.push(' ');
        }
        text.push_str("done");
        corpus.push(CorpusSentence { text, mentions });
    }
    (corpus, kr)
}

/// Straightforward reference for `align`.
fn brute_force_align(corpus: &[CorpusSentence], kr: &[TripleKey]) -> Vec<(String, String, String, String)> {
    let kr: BTreeSet<&TripleKey> = kr.iter().collect();
    let mut out = Vec::new();
    for s in corpus {
        let mut firsts: Vec<&Mention> = Vec::new();
        for m in &s.mentions {
            if !firsts.iter().any(|f| f.entity_id == m.entity_id) {
                firsts.push(m);
            }
        }
        for i in 0..firsts.len() {
            for j in i + 1..firsts.len() {
                let (a, b) = (&firsts[i].entity_id, &firsts[j].entity_id);
                let hits: Vec<&&TripleKey> =
                    kr.iter().filter(|t| (&t.0 == a && &t.2 == b) || (&t.0 == b && &t.2 == a)).collect();
                if let [t] = hits.as_slice() {
                    out.push((s.text.clone(), t.0.clone(), t.1.clone(), t.2.clone()));
                }
            }
        }
    }
    out
}

fn criterion_9() -> Check {
    let mut rng = seeded_rng(9);
    let mut total = 0;
    for case in 0..100 {
        let (corpus, kr) = random_corpus(&mut rng);
        let aligned = ok_or(align(&corpus, &kr), "align")?;
        let got: Vec<_> = aligned
            .iter()
            .map(|i| (i.text.clone(), i.e1.entity_id.clone(), i.relation_id.clone(), i.e2.entity_id.clone()))
            .collect();
        ensure(got == brute_force_align(&corpus, &kr), || format!("corpus {case}: align differs from oracle"))?;
        for inst in &aligned {
            let e1 = ok_or(inst.e1.span.slice(&inst.text), "span")?;
            ensure(e1.starts_with(&inst.e1.entity_id), || format!("corpus {case}: bad span"))?;
        }
        total += aligned.len();
        if aligned.is_empty() {
            continue;
        }
        let fraction = rng.gen_range(0.1..0.5);
        let outcome = ok_or(split(&aligned, &mut rng, fraction), "split")?;
        ensure(outcome.train.len() + outcome.test_pool.len() == aligned.len(), || format!("corpus {case}: lost instances"))?;
        let pair = |i: &patsnd_core::FactInstance| {
            let (a, b) = (i.e1.entity_id.clone(), i.e2.entity_id.clone());
            if a <= b { (a, b) } else { (b, a) }
        };
        let train_texts: BTreeSet<&str> = outcome.train.iter().map(|i| i.text.as_str()).collect();
        let train_pairs: BTreeSet<(String, String)> = outcome.train.iter().map(pair).collect();
        for t in &outcome.test_pool {
            ensure(!train_texts.contains(t.text.as_str()), || format!("corpus {case}: text crosses split"))?;
            ensure(!train_pairs.contains(&pair(t)), || format!("corpus {case}: entity pair crosses split"))?;
        }
    }
    Ok(format!("100 corpora, {total} aligned instances, align equals oracle, no leakage"))
}

fn criterion_10() -> Check {
    let bench = ok_or(
        generate(&SyntheticConfig {
            seed: 10,
            entities_per_type: 8,
            train_normal: 60,
            test_normal: 10,
            test_novel: 10,
            ..SyntheticConfig::default()
        }),
        "generate",
    )?;
    let spec = EncoderSpec::Fallback { dim: 96, seed: 3 };
    let mut rng = seeded_rng(10);
    let model = SnsModel::random(96, 24, 3, bench.relation_ids(), &mut rng);
    let triples: Vec<Triple> = bench.train_triples().into_iter().take(50).collect();
    ensure(triples.len() == 50, || "fewer than 50 triples".into())?;
    let score_all = |m: &SnsModel, enc: &dyn patsnd_core::TextEncoder| -> Result<Vec<f64>, String> {
        triples
            .iter()
            .map(|t| ok_or(m.novelty_score(&t.e1, &t.relation_id, &t.e2, &bench.kb, enc), "score"))
            .collect()
    };
    let before = score_all(&model, &HashedTrigramEncoder::new(96, 3))?;

    let dir = ok_or(tempfile::tempdir(), "tempdir")?;
    let path = dir.path().join("model.ckpt");
    let ck = Checkpoint {
        model,
        encoder: spec,
        config: TrainConfig::default(),
    };
    ok_or(ck.save(&path), "save")?;
    let loaded = ok_or(Checkpoint::load(&path), "load")?;
    let encoder = ok_or(loaded.encoder.load_in(None), "encoder")?;
    let after = score_all(&loaded.model, encoder.as_encoder())?;
    let identical = before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(identical, || "scores differ after reload".into())?;
    Ok("50 triples score bit-identically after save and load".into())
}

fn main() {
    let started = Instant::now();
    let pipeline = run_pipeline();
    let criteria: Vec<Criterion> = vec![
        ("synthetic end-to-end AUC", Box::new(|| criterion_1(&pipeline))),
        ("synthetic NCS vs random baseline", Box::new(|| criterion_2(&pipeline))),
        ("relation classifier macro F1", Box::new(criterion_3)),
        ("attention algebra", Box::new(criterion_4)),
        ("gradients vs finite differences", Box::new(criterion_5)),
        ("hinge-loss table", Box::new(criterion_6)),
        ("AUC oracle", Box::new(criterion_7)),
        ("corruption generator", Box::new(criterion_8)),
        ("alignment and split disjointness", Box::new(criterion_9)),
        ("checkpoint round-trip", Box::new(criterion_10)),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let line = match result {
            Ok(detail) => format!("PASS criterion {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                format!("FAIL criterion {:>2} {name}: {detail}", i + 1)
            }
        };
        println!("{line}");
    }
    println!(
        "acceptance: {} passed, {failures} failed in {:.1}s",
        criteria.len() - failures,
        started.elapsed().as_secs_f64()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
