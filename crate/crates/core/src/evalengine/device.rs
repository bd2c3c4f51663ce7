use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, ThreadId};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::search_space::ArchConfig;
use crate::supernet::{forward, SupernetParams};
use crate::tensor::Matrix;

/// One forward execution requested from a device.
pub struct Job<'a> {
    pub cfg: &'a ArchConfig,
    pub macs: u64,
    pub snapshot: &'a SupernetParams,
    pub run_index: usize,
    /// Other tasks sharing the device while this job runs.
    pub co_tenants: usize,
}

/// Timer, synchronisation and execution hooks of an accelerator.
pub trait DeviceAdapter: Send + Sync {
    /// Blocks until all queued work on the device has finished.
    fn synchronize(&self);
    /// Executes one batch-1 forward and returns its duration in ms.
    fn execute(&self, job: &Job<'_>) -> Result<f64>;
}

/// Stable 64-bit digest of a string.
pub fn stable_hash(s: &str) -> u64 {
    let d = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Affine latency model `ms = per_mac_ms * macs + base_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub per_mac_ms: f64,
    pub base_ms: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            per_mac_ms: 1e-5,
            base_ms: 0.05,
        }
    }
}

impl CostModel {
    pub fn latency_ms(&self, macs: u64) -> f64 {
        self.per_mac_ms * macs as f64 + self.base_ms
    }
}

/// Deterministic simulated accelerator.
///
/// Each run costs the affine model times `1 + u` with `u` uniform in
/// `[-jitter, jitter]`, plus `interference_ms` per co-tenant. The jitter
/// stream is keyed by `(seed, config, run index)` so a measurement does not
/// depend on which device or worker performed it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedDevice {
    pub cost: CostModel,
    pub jitter: f64,
    pub interference_ms: f64,
    pub seed: u64,
}

impl DeviceAdapter for SimulatedDevice {
    fn synchronize(&self) {}

    fn execute(&self, job: &Job<'_>) -> Result<f64> {
        let base = self.cost.latency_ms(job.macs);
        let u = if self.jitter > 0.0 {
            let key = self.seed ^ stable_hash(&job.cfg.label()).rotate_left(17) ^ (job.run_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            ChaCha8Rng::seed_from_u64(key).gen_range(-self.jitter..=self.jitter)
        } else {
            0.0
        };
        Ok(base * (1.0 + u) + self.interference_ms * job.co_tenants as f64)
    }
}

/// Times the real sliced-supernet forward on the host CPU.
#[derive(Debug, Clone, Copy, Default)]
pub struct HostCpuDevice;

impl DeviceAdapter for HostCpuDevice {
    fn synchronize(&self) {}

    fn execute(&self, job: &Job<'_>) -> Result<f64> {
        let (h, w) = job.snapshot.dims.image;
        let input = Matrix::zeros(h, w);
        let start = Instant::now();
        let out = forward(job.snapshot, job.cfg, &input)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        std::hint::black_box(out);
        Ok(ms)
    }
}

/// Interval during which a device was exclusively leased, in ticks of a
/// process-wide logical clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaseRecord {
    pub device: usize,
    pub ticket: u64,
    pub granted: u64,
    pub released: u64,
}

static CLOCK: AtomicU64 = AtomicU64::new(1);

fn tick() -> u64 {
    CLOCK.fetch_add(1, Ordering::SeqCst)
}

#[derive(Default)]
struct DeviceState {
    occupants: usize,
    holder: Option<(u64, ThreadId)>,
    waiting: VecDeque<u64>,
    next_ticket: u64,
    granted_at: u64,
    log: Vec<LeaseRecord>,
}

/// Device handle shared by workers: any number of shared occupants (accuracy
/// work) or one exclusive lease holder, never both. Leases are granted in
/// request order and are not reentrant.
pub struct Device {
    pub id: usize,
    adapter: Box<dyn DeviceAdapter>,
    state: Mutex<DeviceState>,
    cv: Condvar,
}

impl std::fmt::Debug for Device {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Device").field("id", &self.id).finish()
    }
}

/// Exclusive use of one device; released on drop.
#[derive(Debug)]
pub struct DeviceLease {
    device: Arc<Device>,
    ticket: u64,
}

/// Shared occupancy of one device; released on drop.
#[derive(Debug)]
pub struct Occupancy {
    device: Arc<Device>,
}

impl Device {
    pub fn new(id: usize, adapter: Box<dyn DeviceAdapter>) -> Arc<Self> {
        Arc::new(Self {
            id,
            adapter,
            state: Mutex::new(DeviceState::default()),
            cv: Condvar::new(),
        })
    }

    pub fn adapter(&self) -> &dyn DeviceAdapter {
        self.adapter.as_ref()
    }

    /// Waits for exclusive access: no occupants, no other holder and every
    /// earlier request served.
    pub fn lease(self: &Arc<Self>) -> Result<DeviceLease> {
        let me = thread::current().id();
        let mut st = self.state.lock().unwrap();
        if matches!(st.holder, Some((_, t)) if t == me) {
            return Err(Error::IsolationViolation { device: self.id });
        }
        let ticket = st.next_ticket;
        st.next_ticket += 1;
        st.waiting.push_back(ticket);
        while !(st.holder.is_none() && st.occupants == 0 && st.waiting.front() == Some(&ticket)) {
            st = self.cv.wait(st).unwrap();
        }
        st.waiting.pop_front();
        st.holder = Some((ticket, me));
        st.granted_at = tick();
        Ok(DeviceLease {
            device: Arc::clone(self),
            ticket,
        })
    }

    /// Shared access for work that tolerates co-tenants. Waits while a lease
    /// is held or requested.
    pub fn occupy(self: &Arc<Self>) -> Occupancy {
        let mut st = self.state.lock().unwrap();
        while st.holder.is_some() || !st.waiting.is_empty() {
            st = self.cv.wait(st).unwrap();
        }
        st.occupants += 1;
        Occupancy {
            device: Arc::clone(self),
        }
    }

    pub fn occupants(&self) -> usize {
        self.state.lock().unwrap().occupants
    }

    pub fn is_leased_by(&self, lease: &DeviceLease) -> bool {
        std::ptr::eq(Arc::as_ptr(&lease.device), self)
            && matches!(self.state.lock().unwrap().holder, Some((t, _)) if t == lease.ticket)
    }

    pub fn lease_log(&self) -> Vec<LeaseRecord> {
        self.state.lock().unwrap().log.clone()
    }
}

impl DeviceLease {
    pub fn device(&self) -> &Arc<Device> {
        &self.device
    }
}

impl Drop for DeviceLease {
    fn drop(&mut self) {
        let mut st = self.device.state.lock().unwrap();
        let granted = st.granted_at;
        st.log.push(LeaseRecord {
            device: self.device.id,
            ticket: self.ticket,
            granted,
            released: tick(),
        });
        st.holder = None;
        drop(st);
        self.device.cv.notify_all();
    }
}

impl Drop for Occupancy {
    fn drop(&mut self) {
        let mut st = self.device.state.lock().unwrap();
        st.occupants -= 1;
        drop(st);
        self.device.cv.notify_all();
    }
}

/// Warm-up and timing protocol for latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyProtocol {
    pub warmup_runs: usize,
    pub timed_runs: usize,
}

impl Default for LatencyProtocol {
    fn default() -> Self {
        Self {
            warmup_runs: 5,
            timed_runs: 21,
        }
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median batch-1 latency of `cfg` on `device`, which the caller must hold
/// leased. Warm-up runs are discarded; every timed run is bracketed by
/// device synchronisation.
pub fn measure_latency(
    device: &Device,
    lease: &DeviceLease,
    cfg: &ArchConfig,
    macs: u64,
    snapshot: &SupernetParams,
    protocol: &LatencyProtocol,
) -> Result<f64> {
    if !device.is_leased_by(lease) {
        return Err(Error::IsolationViolation { device: device.id });
    }
    if protocol.timed_runs == 0 {
        return Err(Error::Measurement("at least one timed run is required".into()));
    }
    let adapter = device.adapter();
    let co_tenants = device.occupants();
    let job = |run_index| Job {
        cfg,
        macs,
        snapshot,
        run_index,
        co_tenants,
    };
    for r in 0..protocol.warmup_runs {
        adapter.execute(&job(r))?;
    }
    let mut times = Vec::with_capacity(protocol.timed_runs);
    for r in 0..protocol.timed_runs {
        adapter.synchronize();
        let t = adapter.execute(&job(protocol.warmup_runs + r))?;
        adapter.synchronize();
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Measurement(format!("run {r} reported {t} ms")));
        }
        times.push(t);
    }
    Ok(median(&mut times))
}
