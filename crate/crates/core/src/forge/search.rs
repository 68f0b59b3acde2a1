use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_traits::One;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{ForgeError, ForgeOrigin, ForgeResult};
use crate::modmath::montgomery::{lt, sub_into};
use crate::modmath::{mod_exp, raw_verify, to_fixed_be, Montgomery, PublicKey};
use crate::seed::Seed;
use crate::sigparser::{classify_plaintext, ParserConfig, ParserMode, PlaintextBlock};

/// Attempts reserved from the shared budget at a time.
const CHUNK: u64 = 1 << 12;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchParams {
    pub workers: usize,
    pub seed: Seed,
    pub max_attempts: u64,
    /// Recompute `r^(e z)` from scratch every this many iterations and
    /// compare with the accumulator.
    pub verify_every: Option<u64>,
}

impl SearchParams {
    pub fn new(workers: usize, seed: Seed, max_attempts: u64) -> Self {
        SearchParams {
            workers,
            seed,
            max_attempts,
            verify_every: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Progress {
    pub attempts: u64,
    pub elapsed: Duration,
}

impl Progress {
    pub fn rate(&self) -> f64 {
        let s = self.elapsed.as_secs_f64();
        if s > 0.0 {
            self.attempts as f64 / s
        } else {
            0.0
        }
    }

    /// `attempts=<n> rate=<a/s> elapsed=<s>`
    pub fn line(&self) -> String {
        format!(
            "attempts={} rate={:.0} elapsed={:.1}",
            self.attempts,
            self.rate(),
            self.elapsed.as_secs_f64()
        )
    }
}

struct Shared {
    stop: AtomicBool,
    reserved: AtomicU64,
    performed: AtomicU64,
    slot: Mutex<Option<Result<ForgeResult, ForgeError>>>,
    finished: AtomicUsize,
}

impl Shared {
    /// First writer wins; later results are dropped.
    fn offer(&self, r: Result<ForgeResult, ForgeError>) {
        let mut slot = self.slot.lock().expect("slot poisoned");
        if slot.is_none() {
            *slot = Some(r);
        }
        self.stop.store(true, Ordering::SeqCst);
    }
}

/// Brute-force search for a signature whose plaintext the flawed parser
/// lands in `config.target_window`. Returns `Ok(None)` once `max_attempts`
/// candidates (two per chain step) have been tested without a hit.
pub fn brute_force_search(
    key: &PublicKey,
    config: &ParserConfig,
    params: &SearchParams,
) -> Result<Option<ForgeResult>, ForgeError> {
    brute_force_search_with_progress(key, config, params, |_| {})
}

/// As [`brute_force_search`], calling `progress` about once per second from
/// the calling thread.
pub fn brute_force_search_with_progress(
    key: &PublicKey,
    config: &ParserConfig,
    params: &SearchParams,
    mut progress: impl FnMut(Progress),
) -> Result<Option<ForgeResult>, ForgeError> {
    if config.mode != ParserMode::Flawed {
        return Err(ForgeError::StrictConfig);
    }
    if params.workers == 0 {
        return Err(ForgeError::NoWorkers);
    }
    let mont = Montgomery::new(&key.n).ok_or(ForgeError::EvenModulus)?;
    let start = Instant::now();
    let shared = Shared {
        stop: AtomicBool::new(false),
        reserved: AtomicU64::new(0),
        performed: AtomicU64::new(0),
        slot: Mutex::new(None),
        finished: AtomicUsize::new(0),
    };
    std::thread::scope(|scope| {
        for w in 0..params.workers {
            let (shared, mont) = (&shared, &mont);
            scope.spawn(move || {
                let mut worker = Worker::new(key, config, params, mont, w, start);
                if let Some(r) = worker.run(shared) {
                    shared.offer(r);
                }
                shared.finished.fetch_add(1, Ordering::SeqCst);
            });
        }
        let mut last = Instant::now();
        while shared.finished.load(Ordering::SeqCst) < params.workers {
            std::thread::sleep(Duration::from_millis(20));
            if last.elapsed() >= Duration::from_secs(1) {
                last = Instant::now();
                progress(Progress {
                    attempts: shared.performed.load(Ordering::Relaxed),
                    elapsed: start.elapsed(),
                });
            }
        }
    });
    shared.slot.into_inner().expect("slot poisoned").transpose()
}

struct Worker<'a> {
    key: &'a PublicKey,
    config: &'a ParserConfig,
    params: &'a SearchParams,
    mont: &'a Montgomery,
    id: usize,
    start: Instant,
    block_length: usize,
}

/// Big-endian byte `i` of a `len`-byte encoding of little-endian limbs.
#[inline]
fn be_byte(limbs: &[u64], len: usize, i: usize) -> u8 {
    let k = len - 1 - i;
    (limbs[k / 8] >> (8 * (k % 8))) as u8
}

fn limbs_to_be(limbs: &[u64], out: &mut [u8]) {
    let len = out.len();
    for (i, byte) in out.iter_mut().enumerate() {
        *byte = be_byte(limbs, len, i);
    }
}

impl<'a> Worker<'a> {
    fn new(
        key: &'a PublicKey,
        config: &'a ParserConfig,
        params: &'a SearchParams,
        mont: &'a Montgomery,
        id: usize,
        start: Instant,
    ) -> Self {
        Worker {
            key,
            config,
            params,
            mont,
            id,
            start,
            block_length: key.block_length(),
        }
    }

    /// Uniform root with `1 < r < n` by rejection.
    fn draw_root(&self, rng: &mut ChaCha20Rng) -> BigUint {
        let bits = self.key.n.bits() as usize;
        let mut buf = vec![0u8; bits.div_ceil(8)];
        let excess = buf.len() * 8 - bits;
        loop {
            rng.fill_bytes(&mut buf);
            buf[0] &= 0xff >> excess;
            let r = BigUint::from_bytes_be(&buf);
            if r > BigUint::one() && r < self.key.n {
                return r;
            }
        }
    }

    #[inline]
    fn test(&self, y: &[u64], bytes: &mut [u8]) -> Option<i64> {
        let b0 = be_byte(y, self.block_length, 0);
        let b1 = be_byte(y, self.block_length, 1);
        if !self.config.prefix_admits(b0, b1) {
            return None;
        }
        limbs_to_be(y, bytes);
        classify_plaintext(bytes, self.config)
    }

    fn run(&mut self, shared: &Shared) -> Option<Result<ForgeResult, ForgeError>> {
        let mut rng = ChaCha20Rng::from_seed(self.params.seed.0);
        rng.set_stream(self.id as u64);
        let root = self.draw_root(&mut rng);
        let l = self.mont.limbs();
        let n = self.mont.modulus_limbs();
        let k = mod_exp(&root, &self.key.e, &self.key.n).expect("n > 1");
        let k_mont = self.mont.to_montgomery(&k);
        let mut y = vec![0u64; l];
        y[0] = 1;
        let mut next = vec![0u64; l];
        let mut neg = vec![0u64; l];
        let mut scratch = vec![0u64; l + 2];
        let mut bytes = vec![0u8; self.block_length];
        let mut z: u64 = 0;

        loop {
            if shared.stop.load(Ordering::Relaxed) {
                return None;
            }
            let begin = shared.reserved.fetch_add(CHUNK, Ordering::SeqCst);
            if begin >= self.params.max_attempts {
                return None;
            }
            let budget = CHUNK.min(self.params.max_attempts - begin);
            let mut used = 0u64;
            while used < budget {
                // y <- y * k; multiplying by k R keeps y in normal form.
                self.mont.mul_into(&y, &k_mont, &mut next, &mut scratch);
                std::mem::swap(&mut y, &mut next);
                z += 1;
                if let Some(every) = self.params.verify_every {
                    if z % every == 0 && !self.chain_holds(&root, z, &y) {
                        return Some(Err(ForgeError::ChainDiverged { iterations: z }));
                    }
                }
                used += 1;
                if let Some(landing) = self.test(&y, &mut bytes) {
                    return Some(self.finish(shared, &root, z, &y, false, landing, used));
                }
                if used == budget {
                    break;
                }
                // Zero never occurs: y is a unit.
                debug_assert!(lt(&y, n));
                sub_into(n, &y, &mut neg);
                used += 1;
                if let Some(landing) = self.test(&neg, &mut bytes) {
                    return Some(self.finish(shared, &root, z, &neg, true, landing, used));
                }
            }
            shared.performed.fetch_add(used, Ordering::Relaxed);
        }
    }

    fn chain_holds(&self, root: &BigUint, z: u64, y: &[u64]) -> bool {
        let ez = &self.key.e * BigUint::from(z);
        mod_exp(root, &ez, &self.key.n).expect("n > 1") == self.mont.from_limbs(y)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        shared: &Shared,
        root: &BigUint,
        z: u64,
        value: &[u64],
        negated: bool,
        landing: i64,
        used: u64,
    ) -> Result<ForgeResult, ForgeError> {
        let attempts = shared.performed.fetch_add(used, Ordering::SeqCst) + used;
        let n = &self.key.n;
        let s = mod_exp(root, &BigUint::from(z), n)?;
        let signature = if negated { n - s } else { s };
        let value = self.mont.from_limbs(value);
        if raw_verify(&signature, self.key)? != value {
            return Err(ForgeError::UnconfirmedHit { iterations: z });
        }
        let plaintext = PlaintextBlock::new(to_fixed_be(&value, self.block_length)?);
        Ok(ForgeResult {
            signature,
            plaintext,
            landing_offset: landing,
            attempts,
            elapsed: self.start.elapsed(),
            origin: ForgeOrigin::Search {
                worker: self.id,
                root: root.clone(),
                iterations: z,
                negated,
            },
        })
    }
}
