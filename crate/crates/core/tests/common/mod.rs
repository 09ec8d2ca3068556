#![allow(dead_code)]

use std::path::PathBuf;

use pcsm::config::ScenarioConfig;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Load a bundled scenario by file stem, e.g. `"table/burst_injection_pcsm"`.
pub fn scenario(stem: &str) -> ScenarioConfig {
    let path = scenarios_dir().join(format!("{stem}.toml"));
    ScenarioConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn table_scenarios() -> Vec<ScenarioConfig> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scenarios_dir().join("table"))
        .expect("bundled scenario dir")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(|p| ScenarioConfig::load(p).unwrap()).collect()
}

/// Packets a staggered sender schedule fits into `[convergence, duration]`,
/// counted from first principles: sender `k` starts `k * interval / n` after
/// convergence and a packet is sent only if its whole fragment train ends
/// inside the run.
pub fn expected_packets(cfg: &ScenarioConfig) -> u64 {
    let t = &cfg.traffic;
    let n = cfg.topology.senders as usize;
    let frags = cfg.traffic.payload_size.div_ceil(96);
    let train = (frags - 1) as f64 * t.fragment_gap + 0.01;
    (0..n)
        .map(|k| {
            let first = t.convergence + k as f64 * t.send_interval / n as f64;
            let room = t.duration - train - first;
            if room < 0.0 {
                0
            } else {
                (room / t.send_interval).floor() as u64 + 1
            }
        })
        .sum()
}

/// RFC 2104 HMAC-SHA1 written against the raw SHA-1 digest.
pub fn hmac_sha1(key: &[u8], msg: &[u8]) -> [u8; 20] {
    use sha1::{Digest, Sha1};
    let mut k = [0u8; 64];
    if key.len() > 64 {
        k[..20].copy_from_slice(&Sha1::digest(key));
    } else {
        k[..key.len()].copy_from_slice(key);
    }
    let pad = |b: u8| k.iter().map(|x| x ^ b).collect::<Vec<u8>>();
    let inner = Sha1::new().chain_update(pad(0x36)).chain_update(msg).finalize();
    Sha1::new().chain_update(pad(0x5c)).chain_update(inner).finalize().into()
}

/// Truncated chain tags: `H0 = HMAC(K, d0 || nonce)`, `Hi = HMAC(K, H(i-1) || di)`.
pub fn chain_oracle(key: &[u8], nonce: &[u8], payloads: &[Vec<u8>]) -> Vec<[u8; 8]> {
    let mut prev = hmac_sha1(key, &[payloads[0].as_slice(), nonce].concat());
    let mut out = vec![prev[..8].try_into().unwrap()];
    for p in &payloads[1..] {
        prev = hmac_sha1(key, &[prev.as_slice(), p].concat());
        out.push(prev[..8].try_into().unwrap());
    }
    out
}
