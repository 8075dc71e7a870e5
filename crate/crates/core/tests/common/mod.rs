//! Independent oracles shared by the integration tests. Nothing here calls
//! into the crate's own crypto or sampling code.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use rand::RngCore;
use sha3::{Digest, Keccak256};

use flc_core::cryptokit::Address;
use flc_core::flcore::{ModelKind, TrainingDescription};
use flc_core::harness::ScenarioConfig;

/// Keccak-256 from the `sha3` crate.
pub fn keccak_oracle(data: &[u8]) -> [u8; 32] {
    Keccak256::digest(data).into()
}

fn field_prime() -> BigUint {
    (BigUint::from(1u8) << 255u32) - BigUint::from(19u8)
}

fn from_le(bytes: &[u8; 32]) -> BigUint {
    BigUint::from_bytes_le(bytes)
}

fn to_le(x: &BigUint) -> [u8; 32] {
    let mut out = [0u8; 32];
    let b = x.to_bytes_le();
    out[..b.len()].copy_from_slice(&b);
    out
}

/// X25519 as a textbook Montgomery ladder over arbitrary-precision integers.
pub fn x25519_oracle(scalar: &[u8; 32], u: &[u8; 32]) -> [u8; 32] {
    let p = field_prime();
    let mut k = *scalar;
    k[0] &= 248;
    k[31] &= 127;
    k[31] |= 64;
    let k = from_le(&k);
    let mut u = *u;
    u[31] &= 127;
    let x1 = from_le(&u) % &p;

    let add = |a: &BigUint, b: &BigUint| (a + b) % &p;
    let sub = |a: &BigUint, b: &BigUint| (a + &p - b) % &p;
    let mul = |a: &BigUint, b: &BigUint| (a * b) % &p;
    let a24 = BigUint::from(121_665u32);

    let (mut x2, mut z2) = (BigUint::from(1u8), BigUint::from(0u8));
    let (mut x3, mut z3) = (x1.clone(), BigUint::from(1u8));
    let mut swap = false;
    for t in (0..255u64).rev() {
        let bit = k.bit(t);
        if swap ^ bit {
            std::mem::swap(&mut x2, &mut x3);
            std::mem::swap(&mut z2, &mut z3);
        }
        swap = bit;
        let a = add(&x2, &z2);
        let aa = mul(&a, &a);
        let b = sub(&x2, &z2);
        let bb = mul(&b, &b);
        let e = sub(&aa, &bb);
        let c = add(&x3, &z3);
        let d = sub(&x3, &z3);
        let da = mul(&d, &a);
        let cb = mul(&c, &b);
        let s = add(&da, &cb);
        x3 = mul(&s, &s);
        let t2 = sub(&da, &cb);
        z3 = mul(&x1, &mul(&t2, &t2));
        x2 = mul(&aa, &bb);
        z2 = mul(&e, &add(&aa, &mul(&a24, &e)));
    }
    if swap {
        std::mem::swap(&mut x2, &mut x3);
        std::mem::swap(&mut z2, &mut z3);
    }
    let inv = z2.modpow(&(&p - BigUint::from(2u8)), &p);
    to_le(&mul(&x2, &inv))
}

pub fn x25519_base_oracle(scalar: &[u8; 32]) -> [u8; 32] {
    let mut nine = [0u8; 32];
    nine[0] = 9;
    x25519_oracle(scalar, &nine)
}

/// Uniform draw in `[0, bound)`: discard 64-bit outputs at or above the
/// largest multiple of `bound`.
fn draw_below<R: RngCore>(rng: &mut R, bound: u64) -> u64 {
    let limit = bound * (u64::MAX / bound);
    loop {
        let x = rng.next_u64();
        if x < limit {
            return x % bound;
        }
    }
}

/// Selection over `n` address-sorted slots: the first `k` slots of a
/// Fisher-Yates shuffle, returned as a sorted set.
pub fn sampler_oracle<R: RngCore>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut deck: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + draw_below(rng, (n - i) as u64) as usize;
        deck.swap(i, j);
    }
    let mut chosen = deck[..k].to_vec();
    chosen.sort();
    chosen
}

/// Element-wise mean accumulated in extended precision pairs (Neumaier).
pub fn mean_oracle(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    (0..d)
        .map(|j| {
            let mut sum = 0.0f64;
            let mut comp = 0.0f64;
            for r in rows {
                let v = r[j];
                let t = sum + v;
                comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
                sum = t;
            }
            (sum + comp) / rows.len() as f64
        })
        .collect()
}

pub fn plan(input_dim: usize, lr: f64, epochs: u32, rounds: u32, fraction: f64) -> TrainingDescription {
    TrainingDescription {
        model_kind: ModelKind::LinearRegression,
        learning_rate: lr,
        local_epochs: epochs,
        rounds,
        selection_fraction: fraction,
        input_dim,
    }
}

pub fn scenario(seed: u64, workers: usize, dim: usize, samples: usize, sigma: f64, plan: TrainingDescription) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        num_workers: workers,
        input_dim: dim,
        samples_per_worker: samples,
        noise_sigma: sigma,
        plan,
        blacklists: Vec::new(),
        num_owners: 1,
        datasets_per_worker: 1,
    }
}

/// The convergence scenario: ten workers, five features, 200 rows each.
pub fn convergence_scenario() -> ScenarioConfig {
    scenario(20240601, 10, 5, 200, 0.1, plan(5, 0.05, 5, 20, 0.8))
}

pub fn hex32(s: &str) -> [u8; 32] {
    hex::decode(s).unwrap().try_into().unwrap()
}

/// Eligibility by enumerating every (worker, dataset, blocked set) triple.
pub fn eligibility_oracle(
    holdings: &BTreeMap<Address, BTreeSet<String>>,
    blocks: &BTreeMap<(Address, String), BTreeSet<Address>>,
    owner: Address,
) -> BTreeSet<Address> {
    let mut out = BTreeSet::new();
    for (w, sets) in holdings {
        for d in sets {
            let blocked = blocks.get(&(*w, d.clone())).is_some_and(|b| b.contains(&owner));
            if !blocked {
                out.insert(*w);
            }
        }
    }
    out
}
