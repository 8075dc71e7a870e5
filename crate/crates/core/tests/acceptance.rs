//! Acceptance suite: ten criteria, one PASS/FAIL line each. Runs without the
//! libtest harness so the lines are always printed; exits non-zero if any
//! criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use common::*;
use flc_core::aggregator::SecureAggregator;
use flc_core::cryptokit::*;
use flc_core::flcore::{Dataset, WeightVector};
use flc_core::harness::*;
use flc_core::ledger::Ledger;
use flc_core::store::Store;
use flc_core::Error;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, limit_s: f64) -> Outcome {
    let s = elapsed.as_secs_f64();
    ensure!(s < limit_s, "took {s:.2}s, limit {limit_s}s");
    Ok(format!("{s:.2}s"))
}

const EMPTY_DIGEST: &str = "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470";
const ABC_DIGEST: &str = "4e03657aea45a94fc7d47ba826c8d667c0d1e6e33a64a036ec44f58fa12d6c45";
const X_SCALAR: &str = "a546e36bf0527c9d3b16154b82465edd62144c0ac1fc5a18506a2244ba449ac4";
const X_U: &str = "e6db6867583030db3594c1a424b15f7c726624ec26b3353b10a903a6d0ab1c4c";
const X_OUT: &str = "c3da55379de9c6908e94ea4df28d084f32eccf03491c71f754b4075577a28552";

fn crypto_known_answers() -> Outcome {
    let t = Instant::now();
    for (msg, want) in [(&b""[..], EMPTY_DIGEST), (&b"abc"[..], ABC_DIGEST)] {
        let got = keccak256(msg);
        ensure!(got == keccak_oracle(msg), "keccak256({msg:?}) disagrees with oracle");
        ensure!(hex::encode(got) == want, "keccak256({msg:?}) = {}", hex::encode(got));
    }
    let (k, u, want) = (hex32(X_SCALAR), hex32(X_U), hex32(X_OUT));
    ensure!(x25519_oracle(&k, &u) == want, "ladder oracle disagrees with the vector");
    let got = shared_secret_from_slices(&k, &u).map_err(|e| e.to_string())?;
    ensure!(got.as_bytes() == &want, "X25519 = {}", hex::encode(got.as_bytes()));
    let kp = keygen(&k).map_err(|e| e.to_string())?;
    ensure!(kp.public().0 == x25519_base_oracle(&k), "keygen public point disagrees with ladder");
    within(t.elapsed(), 1.0)
}

fn envelope_soundness() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut flips_rejected = 0;
    for i in 0..1000 {
        let bob = KeyPair::generate(&mut rng);
        let len = rng.gen_range(0..2048);
        let mut pt = vec![0u8; len];
        rng.fill_bytes(&mut pt);
        let env = seal_ephemeral(&mut rng, &bob.public(), &pt).map_err(|e| e.to_string())?;
        let back = open(bob.secret(), &env).map_err(|e| format!("trip {i}: {e}"))?;
        ensure!(back == pt, "trip {i}: plaintext differs");

        let mut bad = env.clone();
        let field = rng.gen_range(0..3);
        let target: &mut [u8] = match field {
            0 => &mut bad.nonce,
            1 => &mut bad.ephemeral_public.0,
            _ => &mut bad.ciphertext,
        };
        let pos = rng.gen_range(0..target.len());
        target[pos] ^= 1 << rng.gen_range(0..8);
        ensure!(
            matches!(open(bob.secret(), &bad), Err(Error::Decryption)),
            "mutation {i} (field {field}, byte {pos}) was not rejected"
        );
        flips_rejected += 1;
    }
    Ok(format!("1000 round trips, {flips_rejected} mutations rejected, {}", within(t.elapsed(), 5.0)?))
}

fn aggregation_oracle() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for cfg in 0..50 {
        let n = rng.gen_range(1..=10);
        let d = rng.gen_range(1..=8);
        let store = Arc::new(Store::new());
        let sa_key = KeyPair::generate(&mut rng);
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        let mut sa = SecureAggregator::new(sa_key, seed, store.clone());
        let workers: Vec<KeyPair> = (0..n).map(|_| KeyPair::generate(&mut rng)).collect();
        let roster: Vec<_> = workers.iter().map(|k| (k.address(), k.public())).collect();
        let p = plan(d, 0.1, 1, 1, 1.0);
        sa.begin_round(cfg, &p, &roster).map_err(|e| e.to_string())?;
        let mut rows = Vec::new();
        for w in &workers {
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let u = WeightVector::from_vec(v.clone()).map_err(|e| e.to_string())?;
            let env = seal_ephemeral(&mut rng, &sa.public_key(), &u.to_bytes()).map_err(|e| e.to_string())?;
            sa.receive_update(cfg, w.address(), &env).map_err(|e| e.to_string())?;
            rows.push(v);
        }
        let out = sa.finalize_round(cfg).map_err(|e| e.to_string())?;
        let blob = store.get(&out.new_pointer).map_err(|e| e.to_string())?;
        let got = WeightVector::from_bytes(&blob).map_err(|e| e.to_string())?;
        let want = mean_oracle(&rows);
        for (j, (g, w)) in got.values().iter().zip(&want).enumerate() {
            let err = (g - w).abs();
            worst = worst.max(err);
            ensure!(err <= 1e-12, "config {cfg} (n={n}, d={d}) element {j}: {g} vs {w}");
        }
    }
    Ok(format!("50 configs, worst abs error {worst:.1e}"))
}

/// Full-batch GD on the pooled data, written out longhand.
fn centralized_gd(data: &[&Dataset], dim: usize, lr: f64, steps: usize) -> (f64, f64) {
    let rows: Vec<(&[f64], f64)> = data
        .iter()
        .flat_map(|d| (0..d.rows()).map(move |i| (d.row(i), d.labels()[i])))
        .collect();
    let m = rows.len() as f64;
    let mse = |w: &[f64]| {
        rows.iter()
            .map(|(x, y)| {
                let r: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - y;
                r * r
            })
            .sum::<f64>()
            / m
    };
    let mut w = vec![0.0; dim];
    let start = mse(&w);
    for _ in 0..steps {
        let mut g = vec![0.0; dim];
        for (x, y) in &rows {
            let r: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - y;
            for j in 0..dim {
                g[j] += 2.0 * r * x[j] / m;
            }
        }
        for j in 0..dim {
            w[j] -= lr * g[j];
        }
    }
    (start, mse(&w))
}

fn convergence() -> Outcome {
    let cfg = convergence_scenario();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t = Instant::now();
    let sim = run_scenario_with(&cfg, dir.path(), &RunOptions::default()).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let initial = sim.report.per_round[0].loss_before;
    let last = sim.report.per_round.last().ok_or("no rounds")?.loss_after;
    let data: Vec<&Dataset> = sim.workers.iter().map(|w| w.dataset("ds0").unwrap()).collect();
    let steps = (cfg.plan.rounds * cfg.plan.local_epochs) as usize;
    let (central_start, central) = centralized_gd(&data, cfg.input_dim, cfg.plan.learning_rate, steps);
    ensure!((central_start - initial).abs() < 1e-9, "initial losses disagree: {initial} vs {central_start}");
    ensure!(initial > 1.0, "initial MSE {initial} not above 1.0");
    ensure!(last < 0.05, "final MSE {last} not below 0.05");
    ensure!(central < 0.02, "centralized MSE {central} not below 0.02");
    ensure!(last - central <= 0.03, "federated gap {} above 0.03", last - central);
    Ok(format!(
        "MSE {initial:.3} -> {last:.4}, centralized {central:.4}, gap {:.4}, {}",
        last - central,
        within(elapsed, 10.0)?
    ))
}

fn selection_uniformity() -> Outcome {
    let store = Arc::new(Store::new());
    let mut sa = SecureAggregator::new(keygen(&[5; 32]).unwrap(), keccak256(b"uniformity"), store.clone());
    let mut workers: Vec<KeyPair> = (0..5u8).map(|i| keygen(&[i + 40; 32]).unwrap()).collect();
    workers.sort_by_key(|k| k.address());
    let roster: Vec<_> = workers.iter().map(|k| (k.address(), k.public())).collect();
    let p = plan(1, 0.1, 1, 1, 0.4);
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut counts: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    let rounds = 2000u64;
    for r in 0..rounds {
        sa.begin_round(r, &p, &roster).map_err(|e| e.to_string())?;
        for (i, w) in workers.iter().enumerate() {
            // 2^i marks slot i so the mean of a pair identifies it
            let u = WeightVector::from_vec(vec![(1u32 << i) as f64]).unwrap();
            let env = seal_ephemeral(&mut rng, &sa.public_key(), &u.to_bytes()).map_err(|e| e.to_string())?;
            sa.receive_update(r, w.address(), &env).map_err(|e| e.to_string())?;
        }
        let out = sa.finalize_round(r).map_err(|e| e.to_string())?;
        let v = WeightVector::from_bytes(&store.get(&out.new_pointer).unwrap()).unwrap().values()[0];
        let mask = (v * 2.0) as u32;
        ensure!(mask.count_ones() == 2, "round {r} aggregated {} updates", mask.count_ones());
        let i = mask.trailing_zeros() as usize;
        let j = (mask & (mask - 1)).trailing_zeros() as usize;
        *counts.entry((i, j)).or_default() += 1;
    }
    ensure!(counts.len() == 10, "only {} distinct pairs seen", counts.len());
    let mut extremes = (1.0f64, 0.0f64);
    for (pair, c) in &counts {
        let f = *c as f64 / rounds as f64;
        extremes = (extremes.0.min(f), extremes.1.max(f));
        ensure!((f - 0.1).abs() <= 0.02, "pair {pair:?} frequency {f:.4}");
    }
    Ok(format!("10 pairs over 2000 rounds, frequencies in [{:.4}, {:.4}]", extremes.0, extremes.1))
}

fn audit_privacy() -> Outcome {
    let cfg = scenario(6, 10, 4, 30, 0.1, plan(4, 0.05, 2, 5, 0.7));
    let withheld: BTreeSet<(u32, usize)> = [(1, 3), (3, 3), (4, 8)].into();
    let sim = simulate(
        &cfg,
        &RunOptions {
            withheld,
            ..RunOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let r = reidentify_check(&sim.events, &sim.directory, &worker_evidence(&sim));
    ensure!(r.public_matches == 0, "{} public guesses matched", r.public_matches);
    ensure!(r.ids_pairwise_distinct, "anon ids repeat");
    ensure!(r.cross_claims == 0, "{} ids claimed twice", r.cross_claims);
    for w in &r.workers {
        ensure!(w.exact, "worker {} recovered {:?}, contributed {:?}", w.address, w.recovered, w.expected);
    }
    ensure!(r.pass, "check failed");
    Ok(format!(
        "{} anon ids, {} guesses, 0 matches, 10 workers recover exactly their rounds",
        r.published_ids, r.guesses_tested
    ))
}

fn eavesdropper() -> Outcome {
    let cfg = scenario(7, 4, 3, 25, 0.1, plan(3, 0.05, 2, 3, 0.75));
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_scenario(&cfg, dir.path()).map_err(|e| e.to_string())?;
    let honest = check_run(dir.path(), DEFAULT_ADVERSARY_KEYS).map_err(|e| e.to_string())?;
    ensure!(honest.eavesdrop.pass, "honest run failed: {:?}", honest.eavesdrop.first_offense());

    let clear = simulate(
        &cfg,
        &RunOptions {
            transit: Transit::Cleartext,
            ..RunOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let known: Vec<Vec<u8>> = clear.truth.updates.iter().map(|u| u.2.clone()).collect();
    let r = eavesdrop_check(
        &clear.report.transcript,
        &clear.directory,
        &clear.events,
        &clear.store,
        &known,
        DEFAULT_ADVERSARY_KEYS,
        7,
    );
    ensure!(!r.pass, "negative control passed");
    let sa = clear.directory.aggregator().unwrap().address;
    let first_update = clear.report.transcript.entries().iter().find(|e| e.recipient == sa).unwrap().tick;
    let offense = r.first_offense().unwrap_or_default().to_string();
    ensure!(
        offense.starts_with(&format!("transcript entry {first_update} ")),
        "negative control flagged {offense:?}, first update is entry {first_update}"
    );
    Ok(format!(
        "honest: {} envelopes x {} keys, 0 openings, 0 leaks; cleartext control fails at entry {first_update}",
        honest.eavesdrop.envelopes_checked, honest.eavesdrop.adversary_keys
    ))
}

fn scan_dir(dir: &Path, needles: &[Vec<u8>]) -> Vec<String> {
    let mut hits = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        if p.is_dir() {
            stack.extend(fs::read_dir(&p).unwrap().map(|e| e.unwrap().path()));
            continue;
        }
        let bytes = fs::read(&p).unwrap();
        for n in needles {
            let hexed = hex::encode(n).into_bytes();
            for form in [n, &hexed] {
                if bytes.windows(form.len()).any(|w| w == form.as_slice()) {
                    hits.push(p.display().to_string());
                }
            }
        }
    }
    hits
}

fn erasure_and_obliviousness() -> Outcome {
    let store = Arc::new(Store::new());
    let mut sa = SecureAggregator::new(keygen(&[8; 32]).unwrap(), keccak256(b"erasure"), store);
    let workers: Vec<KeyPair> = (0..6u8).map(|i| keygen(&[i + 80; 32]).unwrap()).collect();
    let roster: Vec<_> = workers.iter().map(|k| (k.address(), k.public())).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    sa.begin_round(0, &plan(2, 0.1, 1, 1, 0.5), &roster).map_err(|e| e.to_string())?;
    for w in &workers {
        let u = WeightVector::from_vec(vec![rng.gen(), rng.gen()]).unwrap();
        let env = seal_ephemeral(&mut rng, &sa.public_key(), &u.to_bytes()).unwrap();
        sa.receive_update(0, w.address(), &env).map_err(|e| e.to_string())?;
    }
    ensure!(sa.inspect_round(0).received.len() == 6, "updates not held before finalize");
    sa.finalize_round(0).map_err(|e| e.to_string())?;
    ensure!(sa.inspect_round(0).is_empty(), "round memory survives finalize");

    let cfg = scenario(9, 8, 4, 30, 0.1, plan(4, 0.05, 2, 4, 0.6));
    let base = simulate(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
    for perm in [1u64, 2, 3] {
        let shuffled = simulate(
            &cfg,
            &RunOptions {
                delivery_shuffle: Some(perm),
                ..RunOptions::default()
            },
        )
        .map_err(|e| e.to_string())?;
        ensure!(shuffled.events == base.events, "arrival permutation {perm} changed the chain");
        ensure!(
            shuffled.report.final_pointer == base.report.final_pointer,
            "arrival permutation {perm} changed the checkpoint"
        );
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sim = run_scenario_with(&cfg, dir.path(), &RunOptions::default()).map_err(|e| e.to_string())?;
    let needles: Vec<Vec<u8>> = sim.truth.updates.iter().map(|u| u.2.clone()).collect();
    ensure!(needles.iter().all(|n| n.len() >= MIN_DISTINCTIVE_LEN), "update too short to scan for");
    let hits = scan_dir(dir.path(), &needles);
    ensure!(hits.is_empty(), "plaintext update found in {}", hits[0]);
    Ok(format!(
        "memory empty after finalize, 3 arrival permutations identical, {} updates absent from all run files",
        needles.len()
    ))
}

fn permissioning() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let instances = 100;
    for inst in 0..instances {
        let n = rng.gen_range(1..=50);
        let owners = rng.gen_range(1..=4);
        let store = Arc::new(Store::new());
        let mut ledger = Ledger::new(store.clone(), KeyPair::generate(&mut rng).address());
        let owner_addrs: Vec<Address> = (0..owners).map(|_| KeyPair::generate(&mut rng).address()).collect();
        let ptr = store.put(&WeightVector::zeros(2).to_bytes()).unwrap();
        let models: Vec<u64> = owner_addrs
            .iter()
            .map(|o| ledger.register_model(*o, ptr, plan(2, 0.1, 1, 1, 1.0)).unwrap())
            .collect();
        let mut holdings = BTreeMap::new();
        let mut blocks = BTreeMap::new();
        for _ in 0..n {
            let kp = KeyPair::generate(&mut rng);
            let held: BTreeSet<String> =
                ["a", "b", "c"].iter().filter(|_| rng.gen_bool(0.6)).map(|s| s.to_string()).collect();
            let w = ledger.register_worker(kp.public(), held.clone()).map_err(|e| e.to_string())?;
            for d in &held {
                if rng.gen_bool(0.5) {
                    let b: BTreeSet<Address> = owner_addrs.iter().filter(|_| rng.gen_bool(0.5)).copied().collect();
                    ledger.set_blacklist(w, w, d, b.clone()).map_err(|e| e.to_string())?;
                    blocks.insert((w, d.clone()), b);
                }
            }
            holdings.insert(w, held);
        }
        for (m, o) in models.iter().zip(&owner_addrs) {
            let got = ledger.eligible_workers(*m).map_err(|e| e.to_string())?;
            ensure!(got == eligibility_oracle(&holdings, &blocks, *o), "instance {inst} model {m} differs");
        }
    }

    let mut silenced = 0;
    for inst in 0..10u64 {
        let n = rng.gen_range(3..=12);
        let mut cfg = scenario(100 + inst, n, 2, 10, 0.1, plan(2, 0.05, 1, 3, 0.5));
        cfg.datasets_per_worker = 2;
        let blocked: Vec<usize> = (1..n).filter(|_| rng.gen_bool(0.4)).collect();
        for &w in &blocked {
            for d in ["ds0", "ds1"] {
                cfg.blacklists.push(BlacklistRule {
                    worker_index: w,
                    dataset_id: d.into(),
                    blocked_owner_indices: vec![0],
                });
            }
        }
        let sim = simulate(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
        for &w in &blocked {
            let addr = sim.workers[w].address();
            let heard = sim.report.transcript.to_recipient(&addr).count();
            ensure!(heard == 0, "config {inst}: blacklisted worker {w} received {heard} messages");
            silenced += 1;
        }
    }
    Ok(format!(
        "{instances} registries match the brute-force oracle; {silenced} fully blacklisted workers received 0 messages"
    ))
}

fn determinism() -> Outcome {
    let cfg = convergence_scenario();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_scenario(&cfg, a.path()).map_err(|e| e.to_string())?;
    let sb = run_scenario_with(
        &cfg,
        b.path(),
        &RunOptions {
            execution: Execution::Shuffled(10),
            ..RunOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    for f in [AUDIT_FILE, TRANSCRIPT_FILE, CHAIN_FILE, METRICS_FILE] {
        let (x, y) = (fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        ensure!(x == y, "{f} differs between runs");
    }
    let ptr = ra.final_pointer;
    ensure!(ptr == sb.report.final_pointer, "final pointers differ");
    let blob = |d: &Path| fs::read(d.join(STORE_DIR).join(ptr.to_hex())).unwrap();
    ensure!(blob(a.path()) == blob(b.path()), "final checkpoint bytes differ");
    Ok(format!("audit trail, transcript and checkpoint {} identical", &ptr.to_hex()[..16]))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("crypto known answers", crypto_known_answers),
        ("envelope soundness", envelope_soundness),
        ("aggregation oracle equivalence", aggregation_oracle),
        ("convergence", convergence),
        ("selection uniformity", selection_uniformity),
        ("audit privacy", audit_privacy),
        ("eavesdropper", eavesdropper),
        ("erasure and obliviousness", erasure_and_obliviousness),
        ("permissioning", permissioning),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS criterion {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
