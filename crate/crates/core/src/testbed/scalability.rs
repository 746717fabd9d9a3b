//! Analytic model for how total snippet distribution plus answer
//! computation time scales with the number of workers.
//!
//! The per-round time has four components:
//!
//! 1. client send: `snippet_bits / client_bw`
//! 2. relay send: every relay pushes its share of all snippets to every
//!    worker, `n_workers * (n_clients * snippet_bits / n_relays) / server_bw`
//! 3. compute: every client waits for one answer,
//!    `n_clients * reply_time / (n_workers * parallel_slots)`
//! 4. worker send: each worker returns its clients' answers,
//!    `(n_clients / n_workers) * answer_bits / server_bw`
//!
//! With a single relay this is the master-bottleneck topology the
//! comparison baseline uses; the relay term then grows linearly in the
//! worker count, which produces the interior minimum. Giving the sharded
//! topology one relay per fixed block of workers makes the relay term
//! constant and the curve monotone.
//!
//! Calibration note: reproducing the reference curve requires reading both
//! quoted bandwidths as binary units — "12 Gb/s" server links as
//! 12 * 2^30 bit/s and "100 Mb/s" client links as 100 * 2^20 bit/s — with
//! 64 KiB answers. With those units every reference point is matched to
//! floating-point precision.

use std::f64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalabilityParams {
    pub n_clients: f64,
    pub n_workers: f64,
    pub n_relays: f64,
    pub snippet_bits: f64,
    pub client_bw_bps: f64,
    pub server_bw_bps: f64,
    pub reply_ms: f64,
    pub answer_bytes: f64,
    pub parallel_slots: f64,
}

impl ScalabilityParams {
    /// Reference evaluation parameters: 2^15 clients, 400-bit snippets
    /// (250 ms at 1.6 kbit/s), 100 Mib/s client links, 12 Gib/s server
    /// links, 13 ms per 64 KiB answer, 48 answers in parallel per worker.
    pub fn reference(n_workers: f64, n_relays: f64) -> Self {
        ScalabilityParams {
            n_clients: 32768.0,
            n_workers,
            n_relays,
            snippet_bits: 400.0,
            client_bw_bps: 100.0 * (1u64 << 20) as f64,
            server_bw_bps: 12.0 * (1u64 << 30) as f64,
            reply_ms: 13.0,
            answer_bytes: 65536.0,
            parallel_slots: 48.0,
        }
    }
}

/// Total seconds to distribute one round of snippets and compute and return
/// all answers.
pub fn analytic_scalability(p: &ScalabilityParams) -> f64 {
    let client_send = p.snippet_bits / p.client_bw_bps;
    let relay_send =
        p.n_workers * (p.n_clients * p.snippet_bits / p.n_relays) / p.server_bw_bps;
    let compute = p.n_clients * (p.reply_ms / 1000.0) / (p.n_workers * p.parallel_slots);
    let worker_send = (p.n_clients / p.n_workers) * (p.answer_bytes * 8.0) / p.server_bw_bps;
    client_send + relay_send + compute + worker_send
}

/// Single-relay (master bottleneck) total at `n_workers`.
pub fn single_relay_total(n_workers: u32) -> f64 {
    analytic_scalability(&ScalabilityParams::reference(n_workers as f64, 1.0))
}

/// Sharded-relay total with one relay per `workers_per_relay` workers.
pub fn sharded_total(n_workers: u32, workers_per_relay: u32) -> f64 {
    let relays = (n_workers / workers_per_relay).max(1);
    analytic_scalability(&ScalabilityParams::reference(
        n_workers as f64,
        relays as f64,
    ))
}

/// Reference curve points for the single-relay baseline: (workers, seconds).
pub const SINGLE_RELAY_ANCHORS: [(u32, f64); 6] = [
    (20, 0.530748866780599),
    (60, 0.23117230428059896),
    (100, 0.2038090751139323),
    (140, 0.21533346499488468),
    (180, 0.23982039455837675),
    (220, 0.27019938761393225),
];

/// Reference curve points for the sharded topology (one relay per 20
/// workers): (workers, seconds).
pub const SHARDED_ANCHORS: [(u32, f64); 6] = [
    (20, 0.530748866780599),
    (60, 0.1904822001139323),
    (100, 0.12242886678059896),
    (140, 0.09326315249488466),
    (180, 0.07705997789171007),
    (220, 0.06674886678059896),
];

/// One sweep row: worker count, single-relay total, sharded total.
pub fn sweep(
    from: u32,
    to: u32,
    step: u32,
    workers_per_relay: u32,
) -> Vec<(u32, f64, f64)> {
    let mut out = Vec::new();
    let mut w = from;
    while w <= to {
        out.push((w, single_relay_total(w), sharded_total(w, workers_per_relay)));
        w += step;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(got: f64, want: f64) -> f64 {
        (got - want).abs() / want
    }

    #[test]
    fn reference_anchors_reproduced_closely() {
        for (w, want) in SINGLE_RELAY_ANCHORS {
            let got = single_relay_total(w);
            assert!(
                rel_err(got, want) < 1e-9,
                "single-relay {w} workers: got {got}, want {want}"
            );
        }
        for (w, want) in SHARDED_ANCHORS {
            let got = sharded_total(w, 20);
            assert!(
                rel_err(got, want) < 1e-9,
                "sharded {w} workers: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn curves_coincide_with_one_relay() {
        // One relay per 20 workers at 20 workers is exactly one relay; the
        // models share the same formula and must agree bit for bit.
        assert_eq!(single_relay_total(20), sharded_total(20, 20));
        for w in [32, 64, 96] {
            let p1 = ScalabilityParams::reference(w as f64, 1.0);
            let single = analytic_scalability(&p1);
            let sharded_as_single =
                analytic_scalability(&ScalabilityParams { n_relays: 1.0, ..p1 });
            assert_eq!(single, sharded_as_single);
        }
    }

    #[test]
    fn sharded_curve_is_non_increasing() {
        let rows = sweep(20, 220, 40, 20);
        for pair in rows.windows(2) {
            assert!(
                pair[1].2 <= pair[0].2 + 1e-12,
                "sharded total increased between {} and {} workers",
                pair[0].0,
                pair[1].0
            );
        }
    }

    #[test]
    fn single_relay_curve_has_interior_minimum_at_100() {
        let rows = sweep(20, 220, 40, 20);
        let min = rows
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty sweep");
        assert_eq!(min.0, 100);
        assert!(rows.first().unwrap().1 > min.1);
        assert!(rows.last().unwrap().1 > min.1);
    }
}
