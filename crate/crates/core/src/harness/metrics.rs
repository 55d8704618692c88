//! Per-tick counter snapshots, written as CSV.

use serde::Serialize;

use crate::upf::PacketCounters;

pub const CSV_HEADER: &str = "t_s,events_processed,bytes_up,bytes_down,active_ues,registered_ues,\
active_sessions,context_bytes_estimate,pkts_in_uplink,pkts_in_downlink,pkts_delivered_onboard,\
pkts_delivered_ground,pkts_delivered_ue,pkts_dropped_no_rule,pkts_dropped_link,pkts_in_flight";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub t_s: f64,
    pub events_processed: u64,
    /// Bytes sent on the access link towards the satellite.
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub active_ues: u64,
    pub registered_ues: u64,
    pub active_sessions: u64,
    pub context_bytes_estimate: u64,
    pub counters: PacketCounters,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        let c = &self.counters;
        format!(
            "{:.6},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.t_s,
            self.events_processed,
            self.bytes_up,
            self.bytes_down,
            self.active_ues,
            self.registered_ues,
            self.active_sessions,
            self.context_bytes_estimate,
            c.in_uplink.packets,
            c.in_downlink.packets,
            c.delivered_onboard.packets,
            c.delivered_ground.packets,
            c.delivered_ue.packets,
            c.dropped_no_rule.packets,
            c.dropped_link.packets,
            c.in_flight.packets,
        )
    }
}

pub fn to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_rows_have_equal_width() {
        let r = MetricsRecord {
            t_s: 1.0,
            events_processed: 4,
            bytes_up: 10,
            bytes_down: 20,
            active_ues: 1,
            registered_ues: 1,
            active_sessions: 0,
            context_bytes_estimate: 58,
            counters: PacketCounters::default(),
        };
        let csv = to_csv(&[r, r]);
        let widths: Vec<_> = csv.lines().map(|l| l.split(',').count()).collect();
        assert_eq!(widths, [16, 16, 16]);
        assert!(csv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("1.000000,4,10,20,1,1,0,58,"));
    }
}
