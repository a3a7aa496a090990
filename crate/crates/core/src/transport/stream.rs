//! Reliable byte stream with NewReno congestion control.
//!
//! [`TcpEndpoint`] is a sans-IO state machine: callers feed it segments,
//! application writes and timer expiries, and it answers with a
//! [`StreamOutput`] listing segments to transmit, the retransmission-timer
//! command and any bytes delivered in order to the application.
//!
//! Sequence space is tracked as 64-bit stream offsets internally and
//! truncated to 32 bits on the wire. Data offset `o` travels as sequence
//! number `iss + 1 + o`; the SYN occupies `iss`.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::sim::SimTime;

pub const SEGMENT_HEADER_LEN: usize = 20;

const FLAG_SYN: u8 = 0x02;
const FLAG_PSH: u8 = 0x08;
const FLAG_ACK: u8 = 0x10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Maximum segment payload, bytes. Default fits one segment in one net slot:
    /// 182 - 20 (network) - 20 (segment header).
    pub mss: usize,
    pub initial_cwnd_segments: usize,
    /// Bytes.
    pub initial_ssthresh: usize,
    /// Seconds.
    pub rto_initial: f64,
    pub rto_min: f64,
    pub rto_max: f64,
    /// Restart from the initial window after an idle period longer than RTO.
    pub idle_restart: bool,
    pub dupack_threshold: u32,
    /// Receive buffer, bytes; advertised as the receive window. Default is
    /// eight full segments.
    pub rcv_buf: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            mss: 142,
            initial_cwnd_segments: 1,
            initial_ssthresh: 65_535,
            rto_initial: 1.0,
            rto_min: 1.0,
            rto_max: 60.0,
            idle_restart: true,
            dupack_threshold: 3,
            rcv_buf: 8 * 142,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mss == 0 {
            return Err(SimError::config("transport.mss", "must be > 0"));
        }
        if self.initial_cwnd_segments == 0 {
            return Err(SimError::config(
                "transport.initial_cwnd_segments",
                "must be > 0",
            ));
        }
        if !(self.rto_min > 0.0 && self.rto_initial > 0.0 && self.rto_max >= self.rto_min) {
            return Err(SimError::config(
                "transport.rto_*",
                "need 0 < rto_min <= rto_max and rto_initial > 0",
            ));
        }
        if self.rcv_buf < self.mss || self.rcv_buf > u16::MAX as usize {
            return Err(SimError::config(
                "transport.rcv_buf",
                "must be within [mss, 65535]",
            ));
        }
        if self.dupack_threshold == 0 {
            return Err(SimError::config("transport.dupack_threshold", "must be > 0"));
        }
        Ok(())
    }

    fn initial_window(&self) -> usize {
        self.initial_cwnd_segments * self.mss
    }
}

/// 20-byte segment header; no options.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentHeader {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub ack: u32,
    pub flags: u8,
    pub window: u16,
}

impl SegmentHeader {
    pub fn syn(&self) -> bool {
        self.flags & FLAG_SYN != 0
    }

    pub fn has_ack(&self) -> bool {
        self.flags & FLAG_ACK != 0
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.ack.to_be_bytes());
        out.push(5 << 4);
        out.push(self.flags);
        out.extend_from_slice(&self.window.to_be_bytes());
        out.extend_from_slice(&[0, 0, 0, 0]);
    }

    pub fn decode(bytes: &[u8]) -> Result<(SegmentHeader, &[u8])> {
        if bytes.len() < SEGMENT_HEADER_LEN {
            return Err(SimError::decode("segment header", "truncated"));
        }
        if bytes[12] >> 4 != 5 {
            return Err(SimError::decode(
                "segment header",
                format!("data offset {}", bytes[12] >> 4),
            ));
        }
        let h = SegmentHeader {
            src_port: u16::from_be_bytes([bytes[0], bytes[1]]),
            dst_port: u16::from_be_bytes([bytes[2], bytes[3]]),
            seq: u32::from_be_bytes(bytes[4..8].try_into().unwrap()),
            ack: u32::from_be_bytes(bytes[8..12].try_into().unwrap()),
            flags: bytes[13],
            window: u16::from_be_bytes([bytes[14], bytes[15]]),
        };
        Ok((h, &bytes[SEGMENT_HEADER_LEN..]))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub header: SegmentHeader,
    pub payload: Vec<u8>,
}

impl Segment {
    pub fn wire_len(&self) -> usize {
        SEGMENT_HEADER_LEN + self.payload.len()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        self.header.encode_into(out);
        out.extend_from_slice(&self.payload);
    }

    pub fn decode(bytes: &[u8]) -> Result<Segment> {
        let (header, payload) = SegmentHeader::decode(bytes)?;
        Ok(Segment {
            header,
            payload: payload.to_vec(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConnState {
    Closed,
    Listen,
    SynSent,
    SynReceived,
    Established,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    SlowStart,
    CongestionAvoidance,
    FastRecovery,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimerCmd {
    Keep,
    Arm(SimTime),
    Disarm,
}

#[derive(Debug, Default)]
pub struct StreamOutput {
    pub segments: Vec<Segment>,
    pub timer: Option<TimerCmd>,
    pub delivered: Vec<u8>,
    pub established: bool,
}

impl StreamOutput {
    fn arm(&mut self, at: SimTime) {
        self.timer = Some(TimerCmd::Arm(at));
    }

    fn disarm(&mut self) {
        self.timer = Some(TimerCmd::Disarm);
    }

    pub fn timer_cmd(&self) -> TimerCmd {
        self.timer.unwrap_or(TimerCmd::Keep)
    }
}

#[derive(Clone, Debug, Default)]
pub struct StreamStats {
    pub segments_sent: u64,
    pub retransmitted_segments: u64,
    pub fast_retransmits: u64,
    pub timeouts: u64,
}

/// One end of a byte-stream connection.
#[derive(Debug)]
pub struct TcpEndpoint {
    cfg: StreamConfig,
    local_port: u16,
    remote_port: u16,
    state: ConnState,
    iss: u32,
    irs: u32,

    // Send side; offsets count data bytes only.
    send_buf: VecDeque<u8>,
    snd_una: u64,
    snd_nxt: u64,
    snd_max: u64,
    cwnd: usize,
    ssthresh: usize,
    dup_acks: u32,
    peer_wnd: usize,
    in_recovery: bool,
    recover: Option<u64>,
    srtt: Option<f64>,
    rttvar: f64,
    rto: f64,
    rtt_probe: Option<(u64, SimTime)>,
    syn_sent_at: Option<SimTime>,
    syn_retransmitted: bool,
    last_activity: SimTime,

    // Receive side.
    rcv_nxt: u64,
    out_of_order: BTreeMap<u64, Vec<u8>>,

    stats: StreamStats,
}

impl TcpEndpoint {
    fn new(cfg: StreamConfig, local_port: u16, remote_port: u16, iss: u32) -> Self {
        let cwnd = cfg.initial_window();
        let ssthresh = cfg.initial_ssthresh;
        let rto = cfg.rto_initial;
        let peer_wnd = cfg.rcv_buf;
        TcpEndpoint {
            cfg,
            local_port,
            remote_port,
            state: ConnState::Closed,
            iss,
            irs: 0,
            send_buf: VecDeque::new(),
            snd_una: 0,
            snd_nxt: 0,
            snd_max: 0,
            cwnd,
            ssthresh,
            dup_acks: 0,
            peer_wnd,
            in_recovery: false,
            recover: None,
            srtt: None,
            rttvar: 0.0,
            rto,
            rtt_probe: None,
            syn_sent_at: None,
            syn_retransmitted: false,
            last_activity: SimTime::ZERO,
            rcv_nxt: 0,
            out_of_order: BTreeMap::new(),
            stats: StreamStats::default(),
        }
    }

    /// Active opener in `Closed` state; call [`connect`](Self::connect).
    pub fn client(cfg: StreamConfig, local_port: u16, remote_port: u16) -> Self {
        Self::new(cfg, local_port, remote_port, 0)
    }

    /// Passive opener waiting for a SYN.
    pub fn listener(cfg: StreamConfig, local_port: u16, remote_port: u16) -> Self {
        let mut ep = Self::new(cfg, local_port, remote_port, 0);
        ep.state = ConnState::Listen;
        ep
    }

    /// A connected pair as if the handshake completed before time zero.
    pub fn established_pair(
        cfg: StreamConfig,
        client_port: u16,
        server_port: u16,
    ) -> (TcpEndpoint, TcpEndpoint) {
        let mut c = Self::new(cfg.clone(), client_port, server_port, 0);
        let mut s = Self::new(cfg, server_port, client_port, 0);
        c.state = ConnState::Established;
        s.state = ConnState::Established;
        c.irs = s.iss;
        s.irs = c.iss;
        (c, s)
    }

    pub fn state(&self) -> ConnState {
        self.state
    }

    pub fn is_established(&self) -> bool {
        self.state == ConnState::Established
    }

    pub fn cwnd(&self) -> usize {
        self.cwnd
    }

    pub fn ssthresh(&self) -> usize {
        self.ssthresh
    }

    pub fn rto(&self) -> SimTime {
        SimTime::from_secs_f64(self.rto)
    }

    pub fn srtt(&self) -> Option<f64> {
        self.srtt
    }

    pub fn phase(&self) -> Phase {
        if self.in_recovery {
            Phase::FastRecovery
        } else if self.cwnd < self.ssthresh {
            Phase::SlowStart
        } else {
            Phase::CongestionAvoidance
        }
    }

    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }

    pub fn snd_nxt(&self) -> u64 {
        self.snd_nxt
    }

    /// One past the highest byte ever transmitted.
    pub fn snd_max(&self) -> u64 {
        self.snd_max
    }

    pub fn flight_size(&self) -> usize {
        (self.snd_max - self.snd_una) as usize
    }

    /// Bytes written but not yet acknowledged.
    pub fn unacked(&self) -> usize {
        self.send_buf.len()
    }

    pub fn rcv_nxt(&self) -> u64 {
        self.rcv_nxt
    }

    pub fn stats(&self) -> &StreamStats {
        &self.stats
    }

    pub fn mss(&self) -> usize {
        self.cfg.mss
    }

    fn data_seq(&self, offset: u64) -> u32 {
        self.iss.wrapping_add(1).wrapping_add(offset as u32)
    }

    fn ack_field(&self) -> u32 {
        self.irs.wrapping_add(1).wrapping_add(self.rcv_nxt as u32)
    }

    fn header(&self, seq: u32, flags: u8) -> SegmentHeader {
        SegmentHeader {
            src_port: self.local_port,
            dst_port: self.remote_port,
            seq,
            ack: if flags & FLAG_ACK != 0 { self.ack_field() } else { 0 },
            flags,
            window: self.cfg.rcv_buf as u16,
        }
    }

    fn pure_ack(&self) -> Segment {
        Segment {
            header: self.header(self.data_seq(self.snd_nxt), FLAG_ACK),
            payload: Vec::new(),
        }
    }

    fn rto_deadline(&self, now: SimTime) -> SimTime {
        now + SimTime::from_secs_f64(self.rto)
    }

    /// Starts the three-way handshake.
    pub fn connect(&mut self, now: SimTime) -> Result<StreamOutput> {
        if self.state != ConnState::Closed {
            return Err(SimError::contract(format!(
                "connect in state {:?}",
                self.state
            )));
        }
        let mut out = StreamOutput::default();
        self.state = ConnState::SynSent;
        self.syn_sent_at = Some(now);
        out.segments.push(Segment {
            header: self.header(self.iss, FLAG_SYN),
            payload: Vec::new(),
        });
        out.arm(self.rto_deadline(now));
        self.last_activity = now;
        Ok(out)
    }

    /// Queues application bytes. Data written before the connection is
    /// established is buffered and sent once it is.
    pub fn send(&mut self, now: SimTime, data: &[u8]) -> StreamOutput {
        let mut out = StreamOutput::default();
        if data.is_empty() {
            return out;
        }
        if self.is_established()
            && self.cfg.idle_restart
            && self.snd_una == self.snd_max
            && now.saturating_sub(self.last_activity) >= SimTime::from_secs_f64(self.rto)
        {
            self.cwnd = self.cwnd.min(self.cfg.initial_window());
        }
        self.send_buf.extend(data);
        if self.is_established() {
            let was_idle = self.snd_una == self.snd_max;
            self.transmit_new(now, &mut out);
            if was_idle && self.snd_max > self.snd_una {
                out.arm(self.rto_deadline(now));
            }
        }
        out
    }

    /// Sends as much unsent data as the congestion window allows.
    fn transmit_new(&mut self, now: SimTime, out: &mut StreamOutput) {
        let buffered_end = self.snd_una + self.send_buf.len() as u64;
        while self.snd_nxt < buffered_end {
            let len = (buffered_end - self.snd_nxt).min(self.cfg.mss as u64) as usize;
            let flight = (self.snd_nxt - self.snd_una) as usize;
            if flight + len > self.cwnd.min(self.peer_wnd) {
                break;
            }
            let retransmission = self.snd_nxt < self.snd_max;
            self.emit_data(self.snd_nxt, len, now, out);
            if retransmission {
                self.stats.retransmitted_segments += 1;
            } else if self.rtt_probe.is_none() {
                self.rtt_probe = Some((self.snd_nxt + len as u64, now));
            }
            self.snd_nxt += len as u64;
            self.snd_max = self.snd_max.max(self.snd_nxt);
        }
    }

    fn emit_data(&mut self, offset: u64, len: usize, now: SimTime, out: &mut StreamOutput) {
        let start = (offset - self.snd_una) as usize;
        let payload: Vec<u8> = self.send_buf.range(start..start + len).copied().collect();
        out.segments.push(Segment {
            header: self.header(self.data_seq(offset), FLAG_ACK | FLAG_PSH),
            payload,
        });
        self.stats.segments_sent += 1;
        self.last_activity = now;
    }

    fn retransmit_head(&mut self, now: SimTime, out: &mut StreamOutput) {
        let len = (self.snd_max - self.snd_una).min(self.cfg.mss as u64) as usize;
        if len == 0 {
            return;
        }
        self.emit_data(self.snd_una, len, now, out);
        self.stats.retransmitted_segments += 1;
        // Karn: no RTT sample across a retransmission.
        self.rtt_probe = None;
    }

    fn update_rtt(&mut self, sample: f64) {
        match self.srtt {
            None => {
                self.srtt = Some(sample);
                self.rttvar = sample / 2.0;
            }
            Some(srtt) => {
                self.rttvar = 0.75 * self.rttvar + 0.25 * (srtt - sample).abs();
                self.srtt = Some(0.875 * srtt + 0.125 * sample);
            }
        }
        let rto = self.srtt.unwrap() + (4.0 * self.rttvar).max(1e-3);
        self.rto = rto.clamp(self.cfg.rto_min, self.cfg.rto_max);
    }

    /// Maps a 32-bit ACK field to a data offset near `snd_una`.
    fn ack_offset(&self, ack: u32) -> Option<u64> {
        let base = self.data_seq(self.snd_una);
        let delta = ack.wrapping_sub(base) as i32;
        let off = self.snd_una as i64 + delta as i64;
        (off >= 0).then_some(off as u64)
    }

    fn seq_offset(&self, seq: u32) -> i64 {
        let base = self.irs.wrapping_add(1).wrapping_add(self.rcv_nxt as u32);
        self.rcv_nxt as i64 + seq.wrapping_sub(base) as i32 as i64
    }

    pub fn on_segment(&mut self, now: SimTime, seg: &Segment) -> Result<StreamOutput> {
        let mut out = StreamOutput::default();
        let h = seg.header;
        if h.has_ack() {
            self.peer_wnd = h.window as usize;
        }
        match self.state {
            ConnState::Closed => {
                return Err(SimError::contract("segment for closed endpoint"));
            }
            ConnState::Listen => {
                if h.syn() && !h.has_ack() {
                    self.irs = h.seq;
                    self.state = ConnState::SynReceived;
                    out.segments.push(Segment {
                        header: self.header(self.iss, FLAG_SYN | FLAG_ACK),
                        payload: Vec::new(),
                    });
                    out.arm(self.rto_deadline(now));
                    self.last_activity = now;
                }
                return Ok(out);
            }
            ConnState::SynSent => {
                if h.syn() && h.has_ack() && h.ack == self.iss.wrapping_add(1) {
                    self.irs = h.seq;
                    self.state = ConnState::Established;
                    out.established = true;
                    if let (Some(t0), false) = (self.syn_sent_at, self.syn_retransmitted) {
                        self.update_rtt((now - t0).as_secs_f64());
                    }
                    out.segments.push(self.pure_ack());
                    out.disarm();
                    self.last_activity = now;
                    let before = self.snd_max;
                    self.transmit_new(now, &mut out);
                    if self.snd_max > before {
                        out.arm(self.rto_deadline(now));
                    }
                }
                return Ok(out);
            }
            ConnState::SynReceived => {
                if h.syn() {
                    // Our SYN-ACK was lost or delayed; repeat it.
                    out.segments.push(Segment {
                        header: self.header(self.iss, FLAG_SYN | FLAG_ACK),
                        payload: Vec::new(),
                    });
                    return Ok(out);
                }
                if h.has_ack() && h.ack == self.iss.wrapping_add(1) {
                    self.state = ConnState::Established;
                    out.established = true;
                    out.disarm();
                } else {
                    return Ok(out);
                }
            }
            ConnState::Established => {
                if h.syn() {
                    // Retransmitted SYN-ACK after our ACK was delayed.
                    out.segments.push(self.pure_ack());
                    return Ok(out);
                }
            }
        }

        if !seg.payload.is_empty() {
            self.receive_data(h.seq, &seg.payload, &mut out);
        }
        if h.has_ack() {
            self.process_ack(now, h.ack, seg.payload.is_empty(), &mut out);
        }
        Ok(out)
    }

    fn receive_data(&mut self, seq: u32, payload: &[u8], out: &mut StreamOutput) {
        let off = self.seq_offset(seq);
        let end = off + payload.len() as i64;
        let rcv = self.rcv_nxt as i64;
        if end > rcv {
            if off <= rcv {
                let skip = (rcv - off) as usize;
                out.delivered.extend_from_slice(&payload[skip..]);
                self.rcv_nxt = end as u64;
                while let Some((&o, _)) = self.out_of_order.first_key_value() {
                    if o > self.rcv_nxt {
                        break;
                    }
                    let (o, data) = self.out_of_order.pop_first().unwrap();
                    let e = o + data.len() as u64;
                    if e > self.rcv_nxt {
                        let skip = (self.rcv_nxt - o) as usize;
                        out.delivered.extend_from_slice(&data[skip..]);
                        self.rcv_nxt = e;
                    }
                }
            } else {
                let entry = self.out_of_order.entry(off as u64).or_default();
                if entry.len() < payload.len() {
                    *entry = payload.to_vec();
                }
            }
        }
        // Every data segment is acknowledged immediately.
        out.segments.push(self.pure_ack());
    }

    fn process_ack(&mut self, now: SimTime, ack: u32, pure: bool, out: &mut StreamOutput) {
        let Some(ack) = self.ack_offset(ack) else {
            return;
        };
        if ack > self.snd_max {
            return;
        }
        let mss = self.cfg.mss;
        if ack > self.snd_una {
            let acked = (ack - self.snd_una) as usize;
            self.send_buf.drain(..acked);
            self.snd_una = ack;
            if self.snd_nxt < self.snd_una {
                self.snd_nxt = self.snd_una;
            }
            if let Some((end, t0)) = self.rtt_probe {
                if ack >= end {
                    self.update_rtt((now - t0).as_secs_f64());
                    self.rtt_probe = None;
                }
            }
            if self.in_recovery {
                let recover = self.recover.unwrap_or(0);
                if ack >= recover {
                    // Full acknowledgement: leave fast recovery.
                    let flight = self.flight_size();
                    self.cwnd = self.ssthresh.min(flight.max(mss) + mss);
                    self.in_recovery = false;
                    self.dup_acks = 0;
                } else {
                    // Partial acknowledgement: retransmit the next hole.
                    self.retransmit_head(now, out);
                    self.cwnd = self.cwnd.saturating_sub(acked);
                    if acked >= mss {
                        self.cwnd += mss;
                    }
                    self.cwnd = self.cwnd.max(mss);
                }
            } else {
                self.dup_acks = 0;
                if self.cwnd < self.ssthresh {
                    self.cwnd += acked.min(mss);
                } else {
                    self.cwnd += (mss * mss / self.cwnd).max(1);
                }
            }
            self.last_activity = now;
            self.transmit_new(now, out);
            if self.snd_una == self.snd_max {
                out.disarm();
            } else {
                out.arm(self.rto_deadline(now));
            }
        } else if ack == self.snd_una && pure && self.snd_max > self.snd_una {
            self.dup_acks += 1;
            if self.in_recovery {
                self.cwnd += mss;
                self.transmit_new(now, out);
            } else if self.dup_acks == self.cfg.dupack_threshold
                && self.recover.is_none_or(|r| self.snd_una >= r)
            {
                self.stats.fast_retransmits += 1;
                self.ssthresh = (self.flight_size() / 2).max(2 * mss);
                self.recover = Some(self.snd_max);
                self.retransmit_head(now, out);
                self.cwnd = self.ssthresh + 3 * mss;
                self.in_recovery = true;
                out.arm(self.rto_deadline(now));
            }
        }
    }

    /// Retransmission timer expiry.
    pub fn on_timeout(&mut self, now: SimTime) -> StreamOutput {
        let mut out = StreamOutput::default();
        match self.state {
            ConnState::SynSent => {
                self.syn_retransmitted = true;
                self.rto = (self.rto * 2.0).min(self.cfg.rto_max);
                out.segments.push(Segment {
                    header: self.header(self.iss, FLAG_SYN),
                    payload: Vec::new(),
                });
                out.arm(self.rto_deadline(now));
                return out;
            }
            ConnState::SynReceived => {
                self.rto = (self.rto * 2.0).min(self.cfg.rto_max);
                out.segments.push(Segment {
                    header: self.header(self.iss, FLAG_SYN | FLAG_ACK),
                    payload: Vec::new(),
                });
                out.arm(self.rto_deadline(now));
                return out;
            }
            ConnState::Established => {}
            ConnState::Closed | ConnState::Listen => return out,
        }
        if self.snd_una == self.snd_max {
            out.disarm();
            return out;
        }
        self.stats.timeouts += 1;
        let mss = self.cfg.mss;
        self.ssthresh = (self.flight_size() / 2).max(2 * mss);
        self.cwnd = mss;
        self.recover = Some(self.snd_max);
        self.in_recovery = false;
        self.dup_acks = 0;
        self.snd_nxt = self.snd_una;
        self.rtt_probe = None;
        self.rto = (self.rto * 2.0).min(self.cfg.rto_max);
        self.transmit_new(now, &mut out);
        out.arm(self.rto_deadline(now));
        out
    }

    #[cfg(test)]
    fn check_invariants(&self) {
        assert!(self.cwnd >= self.cfg.mss);
        assert!(self.snd_una <= self.snd_nxt);
        assert!(self.snd_nxt <= self.snd_max);
        assert!(self.snd_una + self.send_buf.len() as u64 >= self.snd_max);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Scheduler;
    use proptest::prelude::*;
    use sha2::{Digest, Sha256};

    fn cfg() -> StreamConfig {
        StreamConfig::default()
    }

    fn pair(cfg: StreamConfig) -> (TcpEndpoint, TcpEndpoint) {
        TcpEndpoint::established_pair(cfg, 1, 2)
    }

    fn ack_for(ep: &TcpEndpoint, peer: &TcpEndpoint, offset: u64) -> Segment {
        // An ACK from `peer` acknowledging `offset` bytes of `ep`'s stream.
        let _ = peer;
        Segment {
            header: SegmentHeader {
                src_port: ep.remote_port,
                dst_port: ep.local_port,
                seq: 0,
                ack: ep.data_seq(offset),
                flags: FLAG_ACK,
                window: u16::MAX,
            },
            payload: Vec::new(),
        }
    }

    #[test]
    fn header_is_twenty_bytes() {
        let (c, _) = TcpEndpoint::established_pair(cfg(), 1, 2);
        let mut buf = Vec::new();
        c.pure_ack().encode_into(&mut buf);
        assert_eq!(buf.len(), SEGMENT_HEADER_LEN);
        let back = Segment::decode(&buf).unwrap();
        assert_eq!(back, c.pure_ack());
    }

    #[test]
    fn handshake_then_buffered_data_flows() {
        let t0 = SimTime::ZERO;
        let mut c = TcpEndpoint::client(cfg(), 1000, 1883);
        let mut s = TcpEndpoint::listener(cfg(), 1883, 1000);
        // Data written before establishment is held back.
        let early = c.send(t0, b"hello");
        assert!(early.segments.is_empty());

        let syn = c.connect(t0).unwrap();
        assert_eq!(syn.segments.len(), 1);
        assert!(syn.segments[0].header.syn());
        let synack = s.on_segment(SimTime::from_millis(273), &syn.segments[0]).unwrap();
        assert_eq!(s.state(), ConnState::SynReceived);
        let t1 = SimTime::from_millis(533);
        let fin = c.on_segment(t1, &synack.segments[0]).unwrap();
        assert!(fin.established);
        assert_eq!(c.state(), ConnState::Established);
        // Final ACK plus the buffered data segment.
        assert_eq!(fin.segments.len(), 2);
        assert_eq!(fin.segments[1].payload, b"hello");
        let est = s.on_segment(SimTime::from_millis(806), &fin.segments[0]).unwrap();
        assert!(est.established);
        let data = s.on_segment(SimTime::from_millis(806), &fin.segments[1]).unwrap();
        assert_eq!(data.delivered, b"hello");
        assert!((c.srtt().unwrap() - 0.533).abs() < 1e-9);
    }

    #[test]
    fn slow_start_doubles_per_round() {
        let (mut c, s) = pair(cfg());
        let now = SimTime::ZERO;
        let mss = c.mss();
        let out = c.send(now, &vec![1u8; 64 * mss]);
        assert_eq!(out.segments.len(), 1);
        let mut acked = 0u64;
        let mut in_flight = out.segments.len();
        let mut per_round = vec![in_flight];
        for _ in 0..5 {
            let mut sent = 0;
            for _ in 0..in_flight {
                acked += mss as u64;
                let ack = ack_for(&c, &s, acked);
                sent += c.on_segment(now, &ack).unwrap().segments.len();
                c.check_invariants();
            }
            in_flight = sent;
            per_round.push(sent);
        }
        assert_eq!(per_round, vec![1, 2, 4, 8, 16, 32]);
        assert_eq!(c.phase(), Phase::SlowStart);
    }

    #[test]
    fn congestion_avoidance_adds_mss_squared_over_cwnd() {
        let cfg = StreamConfig {
            initial_cwnd_segments: 4,
            initial_ssthresh: 4 * 142,
            ..cfg()
        };
        let (mut c, s) = pair(cfg);
        c.send(SimTime::ZERO, &vec![0u8; 100 * 142]);
        assert_eq!(c.phase(), Phase::CongestionAvoidance);
        let before = c.cwnd();
        c.on_segment(SimTime::ZERO, &ack_for(&c, &s, 142)).unwrap();
        assert_eq!(c.cwnd(), before + 142 * 142 / before);
    }

    #[test]
    fn three_dupacks_trigger_fast_retransmit() {
        let cfg = StreamConfig {
            initial_cwnd_segments: 10,
            rcv_buf: 65_535,
            ..cfg()
        };
        let (mut c, s) = pair(cfg);
        let mss = c.mss();
        c.send(SimTime::ZERO, &vec![0u8; 10 * mss]);
        assert_eq!(c.flight_size(), 10 * mss);
        let dup = ack_for(&c, &s, 0);
        assert!(c.on_segment(SimTime::ZERO, &dup).unwrap().segments.is_empty());
        assert!(c.on_segment(SimTime::ZERO, &dup).unwrap().segments.is_empty());
        let out = c.on_segment(SimTime::ZERO, &dup).unwrap();
        assert_eq!(out.segments.len(), 1);
        assert_eq!(out.segments[0].header.seq, c.data_seq(0));
        assert_eq!(c.phase(), Phase::FastRecovery);
        assert_eq!(c.ssthresh(), 5 * mss);
        assert_eq!(c.cwnd(), 8 * mss);

        // Partial ACK retransmits the next hole and stays in recovery.
        let partial = ack_for(&c, &s, 3 * mss as u64);
        let out = c.on_segment(SimTime::ZERO, &partial).unwrap();
        assert_eq!(out.segments[0].header.seq, c.data_seq(3 * mss as u64));
        assert_eq!(c.phase(), Phase::FastRecovery);

        // Full ACK leaves recovery with cwnd <= ssthresh.
        let full = ack_for(&c, &s, 10 * mss as u64);
        c.on_segment(SimTime::ZERO, &full).unwrap();
        assert_ne!(c.phase(), Phase::FastRecovery);
        assert!(c.cwnd() <= c.ssthresh());
        c.check_invariants();
    }

    #[test]
    fn timeout_collapses_window() {
        let cfg = StreamConfig {
            initial_cwnd_segments: 8,
            ..cfg()
        };
        let (mut c, _) = pair(cfg);
        let mss = c.mss();
        c.send(SimTime::ZERO, &vec![0u8; 8 * mss]);
        let out = c.on_timeout(SimTime::from_secs(1));
        assert_eq!(c.cwnd(), mss);
        assert_eq!(c.ssthresh(), 4 * mss);
        assert_eq!(out.segments.len(), 1);
        assert_eq!(out.segments[0].header.seq, c.data_seq(0));
        assert_eq!(c.rto(), SimTime::from_secs(2));

        // Small flight: ssthresh floor is two segments.
        let (mut c, _) = pair(StreamConfig::default());
        c.send(SimTime::ZERO, &vec![0u8; mss]);
        c.on_timeout(SimTime::from_secs(1));
        assert_eq!(c.ssthresh(), 2 * mss);
    }

    #[test]
    fn idle_restart_resets_window() {
        let (mut c, s) = pair(StreamConfig::default());
        let mss = c.mss();
        c.send(SimTime::ZERO, &vec![0u8; 3 * mss]);
        let mut acked = 0;
        for _ in 0..3 {
            acked += mss as u64;
            c.on_segment(SimTime::from_millis(500), &ack_for(&c, &s, acked))
                .unwrap();
        }
        assert!(c.cwnd() > mss);
        let out = c.send(SimTime::from_secs(30), &vec![0u8; 5 * mss]);
        assert_eq!(out.segments.len(), 1);
        assert_eq!(c.cwnd(), mss);
    }

    #[test]
    fn receive_window_caps_flight() {
        let cfg = StreamConfig {
            initial_cwnd_segments: 20,
            ..cfg()
        };
        let (mut c, _s) = pair(cfg);
        let mss = c.mss();
        let out = c.send(SimTime::ZERO, &vec![0u8; 20 * mss]);
        assert_eq!(out.segments.len(), 8);
        assert_eq!(c.flight_size(), 8 * mss);
        assert_eq!(out.segments[0].header.window as usize, 8 * mss);
    }

    #[derive(Debug)]
    enum Ev {
        ToServer(Segment),
        ToClient(Segment),
        ClientTimer(u64),
    }

    /// Runs a transfer over a channel that drops and reorders segments;
    /// returns the bytes delivered to the server application.
    fn lossy_transfer(data: &[u8], drops: &[bool], jitter: &[u64]) -> Vec<u8> {
        let (mut c, mut s) = TcpEndpoint::established_pair(StreamConfig::default(), 1, 2);
        let mut sched: Scheduler<Ev> = Scheduler::new();
        let mut delivered = Vec::new();
        let mut k = 0usize;
        let mut timer_gen = 0u64;
        let apply_timer = |sched: &mut Scheduler<Ev>, cmd: TimerCmd, gen: &mut u64| {
            if let TimerCmd::Arm(at) = cmd {
                *gen += 1;
                sched.schedule(at, Ev::ClientTimer(*gen)).unwrap();
            } else if cmd == TimerCmd::Disarm {
                *gen += 1;
            }
        };
        let out = c.send(SimTime::ZERO, data);
        apply_timer(&mut sched, out.timer_cmd(), &mut timer_gen);
        for seg in out.segments {
            sched.schedule_in(SimTime::from_millis(260), Ev::ToServer(seg));
        }
        while let Some((now, ev)) = sched.pop() {
            match ev {
                Ev::ToServer(seg) => {
                    let i = k;
                    k += 1;
                    if drops.get(i % drops.len().max(1)).copied().unwrap_or(false) && i < 1_000 {
                        continue;
                    }
                    let out = s.on_segment(now, &seg).unwrap();
                    delivered.extend_from_slice(&out.delivered);
                    for a in out.segments {
                        sched.schedule_in(SimTime::from_millis(260), Ev::ToClient(a));
                    }
                }
                Ev::ToClient(seg) => {
                    let out = c.on_segment(now, &seg).unwrap();
                    c.check_invariants();
                    apply_timer(&mut sched, out.timer_cmd(), &mut timer_gen);
                    for (j, seg) in out.segments.into_iter().enumerate() {
                        let extra = jitter[(k + j) % jitter.len()];
                        sched.schedule_in(SimTime::from_millis(260 + extra), Ev::ToServer(seg));
                    }
                }
                Ev::ClientTimer(g) => {
                    if g != timer_gen {
                        continue;
                    }
                    let out = c.on_timeout(now);
                    apply_timer(&mut sched, out.timer_cmd(), &mut timer_gen);
                    for seg in out.segments {
                        sched.schedule_in(SimTime::from_millis(260), Ev::ToServer(seg));
                    }
                }
            }
            if now > SimTime::from_secs(1_000_000) {
                break;
            }
        }
        assert_eq!(c.unacked(), 0, "sender still has unacked data");
        delivered
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn stream_delivers_exact_bytes_in_order(
            len in 1usize..20_000,
            drops in proptest::collection::vec(prop::bool::weighted(0.1), 1..40),
            jitter in proptest::collection::vec(0u64..40, 1..16),
        ) {
            let data: Vec<u8> = (0..len).map(|i| (i * 31 % 251) as u8).collect();
            let got = lossy_transfer(&data, &drops, &jitter);
            prop_assert_eq!(Sha256::digest(&got), Sha256::digest(&data));
        }
    }
}
