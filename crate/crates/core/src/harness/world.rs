//! One simulation run: sources, RCST MACs, the RA channel, the gateway-side
//! consumers, all driven by a single event queue.

use std::collections::{BTreeSet, HashMap, VecDeque};

use sha2::{Digest, Sha256};

use super::metrics::{load_from_hist, FlowRow, MetricsReport, Summary};
use super::scenario::{Scenario, BASE_PORT};
use crate::channel::{ChannelConfig, ForwardLink, PduId, RaBlock, RcstId};
use crate::coap::{
    max_payload, ArqWindow, CoapMessage, CoapReceiver, Delivery, MessageType, ObserveProxy,
    WindowEntry,
};
use crate::error::{Result, SimError};
use crate::mac::{sic_decode, DecodeFeedback, FeedbackDelay, MacPdu, MacQueue, Outcome};
use crate::mqtt::{Broker, BrokerEvent, MqttPacket, Publisher, QoS};
use crate::sim::{EventHandle, RngStream, Scheduler, SimTime, StreamId};
use crate::transport::{
    DatagramService, NetHeader, Protocol as NetProtocol, Segment, StreamOutput, TcpEndpoint,
    TimerCmd,
};
use crate::workload::{
    next_exchange, payload_bytes, payload_len, segment_count, FlowRecord, Protocol,
};

const GATEWAY_ADDR: u32 = 0x0AFF_FFFE;
const RCST_ADDR_BASE: u32 = 0x0A00_0000;
const COAP_PORT: u16 = 5683;
const MQTT_PORT: u16 = 1883;
/// Client id of the remote consumer in the proxies' registration tables.
const REMOTE_CLIENT: u32 = 0;
/// Broker connection id of the local subscriber.
const SUBSCRIBER_CONN: u32 = u32::MAX;

/// A flow injected at a fixed time instead of the Poisson workload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScriptedFlow {
    pub at: SimTime,
    pub source: u32,
    pub payload_bytes: u64,
}

#[derive(Debug)]
enum Ev {
    Arrival {
        source: u32,
        len: u64,
        truncated: bool,
    },
    BlockTick,
    Feedback {
        rcst: u32,
        block: u64,
        pdu: PduId,
        outcome: Outcome,
    },
    GatewayRx {
        packet: Vec<u8>,
    },
    ForwardRx {
        source: u32,
        packet: Vec<u8>,
    },
    ArqTimer {
        source: u32,
    },
    TcpTimer {
        source: u32,
        broker_side: bool,
    },
}

#[derive(Clone, Debug)]
struct Notification {
    flow: u64,
    last: bool,
    msg: CoapMessage,
}

#[derive(Clone, Copy, Debug)]
enum PduTag {
    Coap { message_id: u16, flow: u64 },
    Stream { start: u64, end: u64 },
    Control,
}

struct CoapEnd {
    window: ArqWindow<Notification>,
    receiver: CoapReceiver,
    timer: Option<EventHandle>,
    on_air: BTreeSet<u16>,
}

struct MqttEnd {
    publisher: Publisher,
    client: TcpEndpoint,
    server: TcpEndpoint,
    client_timer: Option<EventHandle>,
    server_timer: Option<EventHandle>,
    written: u64,
    ack_rx: Vec<u8>,
}

enum Endpoint {
    Cold,
    Coap(Box<CoapEnd>),
    Mqtt(Box<MqttEnd>),
}

struct ProducerFlow {
    flow: u64,
    /// Stream offset one past the flow's last byte (MQTT).
    end: u64,
    /// PUBLISH packet id whose PUBACK completes the flow (MQTT QoS 1).
    last_packet_id: Option<u16>,
    /// Stream offsets of each PUBLISH payload, `[start, end)`.
    spans: Vec<(u64, u64)>,
}

struct ConsumerFlow {
    flow: u64,
    remaining: u64,
    hasher: Sha256,
}

struct Source {
    rcst: u32,
    port: u16,
    arrivals: RngStream,
    sizes: RngStream,
    producer: VecDeque<ProducerFlow>,
    consumer: VecDeque<ConsumerFlow>,
    endpoint: Endpoint,
}

struct Rcst {
    queue: MacQueue,
    rng: RngStream,
    proxy: ObserveProxy,
}

#[derive(Default)]
struct Counters {
    bursts: u64,
    lost: u64,
    wire_bytes: u64,
    hash_mismatches: u64,
    verified: u64,
    truncated: u64,
    peak_on_air: u64,
}

/// Where one flow's payload bytes are when the run stops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowAccount {
    pub flow: u64,
    pub generated: u64,
    /// Handed to the consumer.
    pub delivered: u64,
    /// Sent at least once by the producer, not yet delivered.
    pub in_flight: u64,
    /// Still waiting at the producer, never sent.
    pub queued: u64,
}

/// Output of [`World::run`].
#[derive(Debug)]
pub struct RunResult {
    pub report: MetricsReport,
    pub flows: Vec<FlowRecord>,
    pub accounts: Vec<FlowAccount>,
}

pub struct World {
    sc: Scenario,
    channel: ChannelConfig,
    sched: Scheduler<Ev>,
    forward: ForwardLink,
    uplink: DatagramService,
    downlink: DatagramService,
    per_packet: u64,
    sources: Vec<Source>,
    rcsts: Vec<Rcst>,
    busy: BTreeSet<u32>,
    next_tick: Option<(u64, EventHandle)>,
    last_ticked: Option<u64>,
    next_pdu: u64,
    pdu_tags: HashMap<PduId, (u32, PduTag)>,
    broker: Broker,
    flows: Vec<FlowRecord>,
    gen_hashes: Vec<[u8; 32]>,
    total_flows: usize,
    warmup_flows: usize,
    completed: usize,
    scripted: bool,
    block_load: Vec<(u64, u16)>,
    c: Counters,
}

impl World {
    /// Poisson workload per the scenario's traffic section.
    pub fn new(sc: &Scenario) -> Result<Self> {
        let mut w = Self::build(sc, false)?;
        w.total_flows = sc.traffic.total_exchanges();
        w.warmup_flows = sc.traffic.warmup_exchanges();
        if w.total_flows > 0 {
            for s in 0..w.sources.len() {
                w.schedule_arrival(SimTime::ZERO, s as u32)?;
            }
        }
        Ok(w)
    }

    /// Fixed list of flows; nothing is excluded as warm-up.
    pub fn with_script(sc: &Scenario, script: &[ScriptedFlow]) -> Result<Self> {
        let mut w = Self::build(sc, true)?;
        w.total_flows = script.len();
        for f in script {
            if f.source as usize >= w.sources.len() {
                return Err(SimError::config(
                    "traffic.n_sources",
                    format!("scripted source {} out of range", f.source),
                ));
            }
            if f.payload_bytes == 0 {
                return Err(SimError::config("script.payload_bytes", "must be > 0"));
            }
            let (len, truncated) = payload_len(f.payload_bytes as f64, sc.traffic.payload_cap);
            w.sched.schedule(
                f.at,
                Ev::Arrival {
                    source: f.source,
                    len,
                    truncated,
                },
            )?;
        }
        Ok(w)
    }

    fn build(sc: &Scenario, scripted: bool) -> Result<Self> {
        sc.validate()?;
        let channel = sc.channel.clone();
        let n_rcsts = sc.n_rcsts;
        let sources = (0..sc.traffic.n_sources)
            .map(|s| Source {
                rcst: (s % n_rcsts) as u32,
                port: BASE_PORT + (s / n_rcsts) as u16,
                arrivals: RngStream::new(sc.seed, StreamId::new("arrivals", s as u64)),
                sizes: RngStream::new(sc.seed, StreamId::new("sizes", s as u64)),
                producer: VecDeque::new(),
                consumer: VecDeque::new(),
                endpoint: Endpoint::Cold,
            })
            .collect();
        let rcsts = (0..n_rcsts)
            .map(|r| Rcst {
                queue: MacQueue::new(RcstId(r as u32)),
                rng: RngStream::new(sc.seed, StreamId::new("mac", r as u64)),
                proxy: ObserveProxy::new(),
            })
            .collect();
        let mut broker = Broker::new();
        if sc.protocol == Protocol::Mqtt {
            let connect = MqttPacket::Connect {
                client_id: "subscriber".into(),
                keep_alive: 0,
                clean_session: true,
            };
            let sub = MqttPacket::Subscribe {
                packet_id: 1,
                topics: vec![(sc.mqtt.topic.clone(), sc.mqtt.qos())],
            };
            broker.on_bytes(SUBSCRIBER_CONN, &connect.encode()?)?;
            broker.on_bytes(SUBSCRIBER_CONN, &sub.encode()?)?;
        }
        Ok(World {
            forward: ForwardLink::from_config(&channel),
            uplink: DatagramService::new(channel.net_slot),
            downlink: DatagramService::new(u16::MAX as usize),
            per_packet: sc.per_packet_payload() as u64,
            channel,
            sc: sc.clone(),
            sched: Scheduler::new(),
            sources,
            rcsts,
            busy: BTreeSet::new(),
            next_tick: None,
            last_ticked: None,
            next_pdu: 0,
            pdu_tags: HashMap::new(),
            broker,
            flows: Vec::new(),
            gen_hashes: Vec::new(),
            total_flows: 0,
            warmup_flows: 0,
            completed: 0,
            scripted,
            block_load: Vec::new(),
            c: Counters::default(),
        })
    }

    fn schedule_arrival(&mut self, now: SimTime, source: u32) -> Result<()> {
        let src = &mut self.sources[source as usize];
        let (at, len, truncated) =
            next_exchange(&self.sc.traffic, now, &mut src.arrivals, &mut src.sizes)?;
        self.sched.schedule(
            at,
            Ev::Arrival {
                source,
                len,
                truncated,
            },
        )?;
        Ok(())
    }

    fn done(&self) -> bool {
        self.flows.len() == self.total_flows && self.completed == self.total_flows
    }

    /// Runs until every flow completes or the time limit is hit.
    pub fn run(mut self) -> Result<RunResult> {
        let horizon = SimTime::from_secs_f64(self.sc.run.max_sim_time);
        while !self.done() {
            match self.sched.peek_time() {
                Some(t) if t <= horizon => {}
                _ => break,
            }
            let (now, ev) = self.sched.pop().expect("peeked event");
            self.dispatch(now, ev)?;
        }
        Ok(self.finish())
    }

    fn dispatch(&mut self, now: SimTime, ev: Ev) -> Result<()> {
        match ev {
            Ev::Arrival {
                source,
                len,
                truncated,
            } => self.on_arrival(now, source, len, truncated),
            Ev::BlockTick => self.on_tick(now),
            Ev::Feedback {
                rcst,
                block,
                pdu,
                outcome,
            } => self.on_feedback(now, rcst, block, pdu, outcome),
            Ev::GatewayRx { packet } => self.on_gateway_rx(now, &packet),
            Ev::ForwardRx { source, packet } => self.on_forward_rx(now, source, &packet),
            Ev::ArqTimer { source } => self.on_arq_timer(now, source),
            Ev::TcpTimer {
                source,
                broker_side,
            } => self.on_tcp_timer(now, source, broker_side),
        }
    }

    // ---- producers -------------------------------------------------------

    fn flow_key(&self, id: u64) -> u64 {
        self.sc.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ id
    }

    fn on_arrival(&mut self, now: SimTime, source: u32, len: u64, truncated: bool) -> Result<()> {
        if self.flows.len() >= self.total_flows {
            return Ok(());
        }
        let id = self.flows.len() as u64;
        let payload = payload_bytes(self.flow_key(id), 0, len as usize);
        self.gen_hashes.push(Sha256::digest(&payload).into());
        self.c.truncated += truncated as u64;
        self.flows.push(FlowRecord {
            id,
            source,
            protocol: self.sc.protocol,
            created_at: now,
            payload_bytes: len,
            n_app_packets: segment_count(len, self.per_packet)?,
            truncated,
            started_at: None,
            first_tx_at: None,
            completed_at: None,
            delivered_at: None,
            delivered_bytes: 0,
            warmup: (id as usize) < self.warmup_flows,
        });
        self.sources[source as usize].consumer.push_back(ConsumerFlow {
            flow: id,
            remaining: len,
            hasher: Sha256::new(),
        });
        self.warm_start(source)?;
        match self.sc.protocol {
            Protocol::Coap => self.coap_publish(now, source, id, &payload)?,
            Protocol::Mqtt => self.mqtt_publish(now, source, id, &payload)?,
        }
        if !self.scripted && self.flows.len() < self.total_flows {
            self.schedule_arrival(now, source)?;
        }
        Ok(())
    }

    fn uri(source: u32) -> String {
        format!("/sensor{source}")
    }

    /// Sets up observe registrations or MQTT sessions as if done before t=0.
    fn warm_start(&mut self, source: u32) -> Result<()> {
        let src = &self.sources[source as usize];
        if !matches!(src.endpoint, Endpoint::Cold) {
            return Ok(());
        }
        let rcst = src.rcst as usize;
        let port = src.port;
        let endpoint = match self.sc.protocol {
            Protocol::Coap => {
                self.rcsts[rcst]
                    .proxy
                    .register_observe(REMOTE_CLIENT, &Self::uri(source))?;
                let rng = RngStream::new(self.sc.seed, StreamId::new("arq", source as u64));
                Endpoint::Coap(Box::new(CoapEnd {
                    window: ArqWindow::new(self.sc.coap.clone(), rng)?,
                    receiver: CoapReceiver::new(),
                    timer: None,
                    on_air: BTreeSet::new(),
                }))
            }
            Protocol::Mqtt => {
                let publisher = Publisher::new(
                    &format!("pub{source}"),
                    &self.sc.mqtt.topic,
                    self.sc.mqtt.qos(),
                    self.sc.transport.mss,
                )?;
                let (client, server) =
                    TcpEndpoint::established_pair(self.sc.transport.clone(), port, MQTT_PORT);
                for ev in self
                    .broker
                    .on_bytes(source, &publisher.connect_packet().encode()?)?
                {
                    if !matches!(ev, BrokerEvent::Reply(_)) {
                        return Err(SimError::contract("unexpected broker event on CONNECT"));
                    }
                }
                Endpoint::Mqtt(Box::new(MqttEnd {
                    publisher,
                    client,
                    server,
                    client_timer: None,
                    server_timer: None,
                    written: 0,
                    ack_rx: Vec::new(),
                }))
            }
        };
        self.sources[source as usize].endpoint = endpoint;
        Ok(())
    }

    fn coap_publish(&mut self, now: SimTime, source: u32, flow: u64, payload: &[u8]) -> Result<()> {
        let rcst = self.sources[source as usize].rcst as usize;
        let msgs = self.rcsts[rcst].proxy.notify(
            REMOTE_CLIENT,
            &Self::uri(source),
            payload,
            max_payload(self.channel.net_slot),
        )?;
        let n = msgs.len();
        let Endpoint::Coap(end) = &mut self.sources[source as usize].endpoint else {
            unreachable!("coap endpoint")
        };
        for (i, msg) in msgs.into_iter().enumerate() {
            end.window.enqueue(Notification {
                flow,
                last: i + 1 == n,
                msg,
            });
        }
        self.coap_pump(now, source)
    }

    fn coap_pump(&mut self, now: SimTime, source: u32) -> Result<()> {
        let Endpoint::Coap(end) = &mut self.sources[source as usize].endpoint else {
            unreachable!("coap endpoint")
        };
        let (sent, timer) = end.window.window_send(now);
        if end.window.in_flight() > end.window.nstart() {
            return Err(SimError::contract("CoAP window exceeded NSTART"));
        }
        self.apply_arq_timer(source, timer)?;
        for e in sent {
            self.coap_transmit(now, source, e)?;
        }
        Ok(())
    }

    fn coap_transmit(
        &mut self,
        now: SimTime,
        source: u32,
        e: WindowEntry<Notification>,
    ) -> Result<()> {
        let mut msg = e.item.msg;
        msg.message_id = e.message_id;
        let src = &self.sources[source as usize];
        let packet = self.uplink.dgram_send(
            (RCST_ADDR_BASE + src.rcst, src.port),
            (GATEWAY_ADDR, COAP_PORT),
            &msg.encode()?,
        )?;
        self.enqueue_pdu(
            now,
            source,
            packet,
            PduTag::Coap {
                message_id: e.message_id,
                flow: e.item.flow,
            },
        )
    }

    fn mqtt_publish(&mut self, now: SimTime, source: u32, flow: u64, payload: &[u8]) -> Result<()> {
        let src = &mut self.sources[source as usize];
        let Endpoint::Mqtt(end) = &mut src.endpoint else {
            unreachable!("mqtt endpoint")
        };
        let packets = end.publisher.publish_burst(payload);
        let last_packet_id = match packets.last() {
            Some(MqttPacket::Publish { packet_id, .. }) => *packet_id,
            _ => None,
        };
        let mut bytes = Vec::new();
        let mut spans = Vec::with_capacity(packets.len());
        for p in &packets {
            let enc = p.encode()?;
            if let MqttPacket::Publish { payload, .. } = p {
                let at = end.written + (bytes.len() + enc.len() - payload.len()) as u64;
                spans.push((at, at + payload.len() as u64));
            }
            bytes.extend(enc);
        }
        end.written += bytes.len() as u64;
        src.producer.push_back(ProducerFlow {
            flow,
            end: end.written,
            last_packet_id,
            spans,
        });
        let out = end.client.send(now, &bytes);
        self.client_output(now, source, out)
    }

    /// Segments from the publisher go to the MAC; delivered bytes are PUBACKs.
    fn client_output(&mut self, now: SimTime, source: u32, out: StreamOutput) -> Result<()> {
        let timer = out.timer_cmd();
        let src = &mut self.sources[source as usize];
        let Endpoint::Mqtt(end) = &mut src.endpoint else {
            unreachable!("mqtt endpoint")
        };
        let mut completed = Vec::new();
        if !out.delivered.is_empty() {
            end.ack_rx.extend_from_slice(&out.delivered);
            let mut used = 0;
            while let Some((p, n)) = MqttPacket::decode_prefix(&end.ack_rx[used..])? {
                used += n;
                if let MqttPacket::PubAck { packet_id } = p {
                    if let Some(front) = src.producer.front() {
                        if front.last_packet_id == Some(packet_id) {
                            completed.push(front.flow);
                            src.producer.pop_front();
                        }
                    }
                }
            }
            end.ack_rx.drain(..used);
        }
        if self.sc.mqtt.qos() == QoS::AtMostOnce {
            let una = end.client.snd_una();
            while src.producer.front().is_some_and(|f| f.end <= una) {
                completed.push(src.producer.pop_front().expect("front").flow);
            }
        }
        for f in completed {
            self.complete(now, f);
        }
        let rcst = self.sources[source as usize].rcst;
        let port = self.sources[source as usize].port;
        for seg in out.segments {
            let start = seg.header.seq.wrapping_sub(1) as u64;
            let tag = if seg.payload.is_empty() {
                PduTag::Control
            } else {
                PduTag::Stream {
                    start,
                    end: start + seg.payload.len() as u64,
                }
            };
            let packet = encode_segment(RCST_ADDR_BASE + rcst, GATEWAY_ADDR, &seg);
            debug_assert_eq!(seg.header.src_port, port);
            self.enqueue_pdu(now, source, packet, tag)?;
        }
        self.apply_tcp_timer(source, false, timer)
    }

    /// Segments from the broker side go over the forward link.
    fn server_output(&mut self, now: SimTime, source: u32, out: StreamOutput) -> Result<()> {
        let timer = out.timer_cmd();
        let rcst = self.sources[source as usize].rcst;
        for seg in out.segments {
            let packet = encode_segment(GATEWAY_ADDR, RCST_ADDR_BASE + rcst, &seg);
            let at = self.forward.deliver_forward(now, packet.len())?;
            self.sched.schedule(at, Ev::ForwardRx { source, packet })?;
        }
        self.apply_tcp_timer(source, true, timer)
    }

    fn complete(&mut self, now: SimTime, flow: u64) {
        let f = &mut self.flows[flow as usize];
        if f.completed_at.is_none() {
            f.completed_at = Some(now);
            self.completed += 1;
        }
    }

    // ---- MAC and channel -------------------------------------------------

    fn enqueue_pdu(&mut self, now: SimTime, source: u32, packet: Vec<u8>, tag: PduTag) -> Result<()> {
        let rcst = self.sources[source as usize].rcst;
        let id = PduId(self.next_pdu);
        self.next_pdu += 1;
        let mut eligible = self.channel.first_block_from(now);
        if let Some(last) = self.last_ticked {
            eligible = eligible.max(last + 1);
        }
        self.c.wire_bytes += packet.len() as u64;
        self.rcsts[rcst as usize].queue.enqueue(MacPdu {
            id,
            owner: RcstId(rcst),
            payload: packet,
            replicas: self.sc.mac.replicas,
            attempt: 0,
            enqueued_at: now,
            eligible_block: eligible,
        })?;
        self.pdu_tags.insert(id, (source, tag));
        for flow in self.tag_flows(source, tag) {
            self.flows[flow as usize].started_at.get_or_insert(now);
        }
        self.busy.insert(rcst);
        self.ensure_tick(eligible)
    }

    fn ensure_tick(&mut self, block: u64) -> Result<()> {
        if let Some((b, h)) = self.next_tick {
            if b <= block {
                return Ok(());
            }
            self.sched.cancel(h);
        }
        let h = self
            .sched
            .schedule(self.channel.block_start(block), Ev::BlockTick)?;
        self.next_tick = Some((block, h));
        Ok(())
    }

    fn on_tick(&mut self, now: SimTime) -> Result<()> {
        let (k, _) = self
            .next_tick
            .take()
            .ok_or_else(|| SimError::contract("block tick without schedule"))?;
        debug_assert_eq!(self.channel.block_start(k), now);
        self.last_ticked = Some(k);
        let slots = self.channel.slots_per_block;
        let mut block = RaBlock::open(k, &self.channel);
        let busy: Vec<u32> = self.busy.iter().copied().collect();
        for r in busy {
            let rc = &mut self.rcsts[r as usize];
            let Some(tx) = rc.queue.on_block_start(k, &mut rc.rng, slots)? else {
                continue;
            };
            block.submit_replicas(RcstId(r), tx.pdu, tx.size, &tx.slots)?;
            if tx.first {
                self.note_first_transmission(now, tx.pdu);
            }
        }
        if !block.is_empty() {
            let decoded = sic_decode(&block);
            let count = if self.sc.run.count_replicas {
                block.submissions().iter().map(|s| s.slots.len()).sum()
            } else {
                block.submissions().len()
            };
            self.block_load.push((k, count as u16));
            let close = self.channel.block_close(k);
            let fb_at = close
                + match self.sc.mac.feedback_delay {
                    FeedbackDelay::OneWay => self.channel.one_way_delay(),
                    FeedbackDelay::RoundTrip => self.channel.rtt(),
                };
            let rx_at = close + self.channel.one_way_delay();
            for (sub, ok) in block.submissions().iter().zip(decoded) {
                self.c.bursts += 1;
                let outcome = if ok {
                    let pdu = self.rcsts[sub.rcst.0 as usize]
                        .queue
                        .in_flight(sub.pdu)
                        .ok_or_else(|| SimError::contract("decoded PDU not in flight"))?;
                    let packet = pdu.payload.clone();
                    self.sched.schedule(rx_at, Ev::GatewayRx { packet })?;
                    Outcome::Decoded
                } else {
                    self.c.lost += 1;
                    Outcome::Lost
                };
                self.sched.schedule(
                    fb_at,
                    Ev::Feedback {
                        rcst: sub.rcst.0,
                        block: k,
                        pdu: sub.pdu,
                        outcome,
                    },
                )?;
            }
        }
        let rcsts = &self.rcsts;
        self.busy.retain(|&r| rcsts[r as usize].queue.backlog() > 0);
        if !self.busy.is_empty() {
            self.ensure_tick(k + 1)?;
        }
        Ok(())
    }

    /// Flows with bytes in the PDU tagged `tag`.
    fn tag_flows(&self, source: u32, tag: PduTag) -> Vec<u64> {
        match tag {
            PduTag::Coap { flow, .. } => vec![flow],
            PduTag::Stream { start, end } => {
                let mut begin = 0;
                let mut out = Vec::new();
                for pf in &self.sources[source as usize].producer {
                    if start < pf.end && end > begin {
                        out.push(pf.flow);
                    }
                    begin = pf.end;
                }
                out
            }
            PduTag::Control => Vec::new(),
        }
    }

    fn note_first_transmission(&mut self, now: SimTime, pdu: PduId) {
        let Some(&(source, tag)) = self.pdu_tags.get(&pdu) else {
            return;
        };
        for flow in self.tag_flows(source, tag) {
            self.flows[flow as usize].first_tx_at.get_or_insert(now);
        }
        if let PduTag::Coap { message_id, .. } = tag {
            if let Endpoint::Coap(end) = &mut self.sources[source as usize].endpoint {
                end.on_air.insert(message_id);
                self.c.peak_on_air = self.c.peak_on_air.max(end.on_air.len() as u64);
            }
        }
    }

    fn on_feedback(
        &mut self,
        now: SimTime,
        rcst: u32,
        block: u64,
        pdu: PduId,
        outcome: Outcome,
    ) -> Result<()> {
        let fb = DecodeFeedback {
            block,
            pdu,
            outcome,
            delivered_at: now,
        };
        let current = self.channel.block_at(now);
        let rc = &mut self.rcsts[rcst as usize];
        let released = rc
            .queue
            .on_feedback(&fb, current, self.sc.mac.backoff_max_blocks, &mut rc.rng)?;
        if released.is_some() {
            self.pdu_tags.remove(&pdu);
        } else {
            self.busy.insert(rcst);
            self.ensure_tick(current + 1)?;
        }
        Ok(())
    }

    // ---- gateway side ----------------------------------------------------

    fn source_of(&self, addr: u32, port: u16) -> Result<u32> {
        let rcst = addr.wrapping_sub(RCST_ADDR_BASE) as usize;
        let local = port.wrapping_sub(BASE_PORT) as usize;
        let s = local * self.sc.n_rcsts + rcst;
        if rcst >= self.sc.n_rcsts || s >= self.sources.len() {
            return Err(SimError::decode(
                "network header",
                format!("no source at {addr:#x}:{port}"),
            ));
        }
        Ok(s as u32)
    }

    fn on_gateway_rx(&mut self, now: SimTime, packet: &[u8]) -> Result<()> {
        let (net, rest) = NetHeader::decode(packet)?;
        match net.protocol {
            NetProtocol::Udp => {
                let (_, dh, payload) = DatagramService::dgram_recv(packet)?;
                let source = self.source_of(net.src, dh.src_port)?;
                let msg = CoapMessage::decode(payload)?;
                let Endpoint::Coap(end) = &mut self.sources[source as usize].endpoint else {
                    return Err(SimError::contract("CoAP datagram for non-CoAP source"));
                };
                let out = end.receiver.client_receive(&msg);
                if let Some(ack) = out.ack {
                    let src = &self.sources[source as usize];
                    let packet = self.downlink.dgram_send(
                        (GATEWAY_ADDR, COAP_PORT),
                        (RCST_ADDR_BASE + src.rcst, src.port),
                        &ack.encode()?,
                    )?;
                    let at = self.forward.deliver_forward(now, packet.len())?;
                    self.sched.schedule(at, Ev::ForwardRx { source, packet })?;
                }
                if let Delivery::InOrder(bytes) = out.delivery {
                    self.consume(now, source, &bytes)?;
                }
            }
            NetProtocol::Tcp => {
                let seg = Segment::decode(rest)?;
                let source = self.source_of(net.src, seg.header.src_port)?;
                let Endpoint::Mqtt(end) = &mut self.sources[source as usize].endpoint else {
                    return Err(SimError::contract("stream segment for non-MQTT source"));
                };
                let mut out = end.server.on_segment(now, &seg)?;
                let mut app = Vec::new();
                if !out.delivered.is_empty() {
                    for ev in self.broker.on_bytes(source, &out.delivered)? {
                        match ev {
                            BrokerEvent::Reply(bytes) => {
                                let Endpoint::Mqtt(end) =
                                    &mut self.sources[source as usize].endpoint
                                else {
                                    unreachable!("mqtt endpoint")
                                };
                                let more = end.server.send(now, &bytes);
                                out.segments.extend(more.segments);
                                if more.timer.is_some() {
                                    out.timer = more.timer;
                                }
                            }
                            BrokerEvent::Delivered {
                                payload,
                                subscribers,
                                ..
                            } => {
                                if subscribers.contains(&SUBSCRIBER_CONN) {
                                    app.extend(payload);
                                }
                            }
                        }
                    }
                }
                self.server_output(now, source, out)?;
                if !app.is_empty() {
                    self.consume(now, source, &app)?;
                }
            }
        }
        Ok(())
    }

    /// Hands in-order application bytes to the consumer of `source`.
    fn consume(&mut self, now: SimTime, source: u32, mut bytes: &[u8]) -> Result<()> {
        while !bytes.is_empty() {
            let src = &mut self.sources[source as usize];
            let cf = src.consumer.front_mut().ok_or_else(|| {
                SimError::contract(format!("source {source}: bytes beyond generated flows"))
            })?;
            let take = cf.remaining.min(bytes.len() as u64) as usize;
            cf.hasher.update(&bytes[..take]);
            cf.remaining -= take as u64;
            let flow = cf.flow as usize;
            self.flows[flow].delivered_bytes += take as u64;
            bytes = &bytes[take..];
            if cf.remaining == 0 {
                let cf = src.consumer.pop_front().expect("front");
                let digest: [u8; 32] = cf.hasher.finalize().into();
                self.c.verified += 1;
                if digest != self.gen_hashes[flow] {
                    self.c.hash_mismatches += 1;
                }
                self.flows[flow].delivered_at = Some(now);
            }
        }
        Ok(())
    }

    // ---- back at the RCST side -------------------------------------------

    fn on_forward_rx(&mut self, now: SimTime, source: u32, packet: &[u8]) -> Result<()> {
        let (net, rest) = NetHeader::decode(packet)?;
        match net.protocol {
            NetProtocol::Udp => {
                let (_, _, payload) = DatagramService::dgram_recv(packet)?;
                let msg = CoapMessage::decode(payload)?;
                if msg.mtype != MessageType::Ack {
                    return Err(SimError::contract("forward link carried a non-ACK CoAP message"));
                }
                let Endpoint::Coap(end) = &mut self.sources[source as usize].endpoint else {
                    return Err(SimError::contract("CoAP ACK for non-CoAP source"));
                };
                let out = end.window.on_ack(now, msg.message_id);
                let mut done = Vec::new();
                for e in &out.acked {
                    end.on_air.remove(&e.message_id);
                    if e.item.last {
                        done.push(e.item.flow);
                    }
                }
                self.apply_arq_timer(source, out.timer)?;
                for f in done {
                    self.complete(now, f);
                }
                self.coap_pump(now, source)
            }
            NetProtocol::Tcp => {
                let seg = Segment::decode(rest)?;
                let Endpoint::Mqtt(end) = &mut self.sources[source as usize].endpoint else {
                    return Err(SimError::contract("segment for non-MQTT source"));
                };
                let out = end.client.on_segment(now, &seg)?;
                self.client_output(now, source, out)
            }
        }
    }

    // ---- timers ----------------------------------------------------------

    fn apply_arq_timer(&mut self, source: u32, cmd: TimerCmd) -> Result<()> {
        let Endpoint::Coap(end) = &mut self.sources[source as usize].endpoint else {
            unreachable!("coap endpoint")
        };
        set_timer(&mut self.sched, &mut end.timer, cmd, Ev::ArqTimer { source })
    }

    fn apply_tcp_timer(&mut self, source: u32, broker_side: bool, cmd: TimerCmd) -> Result<()> {
        let Endpoint::Mqtt(end) = &mut self.sources[source as usize].endpoint else {
            unreachable!("mqtt endpoint")
        };
        let slot = if broker_side {
            &mut end.server_timer
        } else {
            &mut end.client_timer
        };
        set_timer(
            &mut self.sched,
            slot,
            cmd,
            Ev::TcpTimer {
                source,
                broker_side,
            },
        )
    }

    fn on_arq_timer(&mut self, now: SimTime, source: u32) -> Result<()> {
        let Endpoint::Coap(end) = &mut self.sources[source as usize].endpoint else {
            unreachable!("coap endpoint")
        };
        end.timer = None;
        let (resend, timer) = end.window.on_timeout(now);
        self.apply_arq_timer(source, timer)?;
        for e in resend {
            self.coap_transmit(now, source, e)?;
        }
        Ok(())
    }

    fn on_tcp_timer(&mut self, now: SimTime, source: u32, broker_side: bool) -> Result<()> {
        let Endpoint::Mqtt(end) = &mut self.sources[source as usize].endpoint else {
            unreachable!("mqtt endpoint")
        };
        if broker_side {
            end.server_timer = None;
            let out = end.server.on_timeout(now);
            self.server_output(now, source, out)
        } else {
            end.client_timer = None;
            let out = end.client.on_timeout(now);
            self.client_output(now, source, out)
        }
    }

    // ---- report ----------------------------------------------------------

    fn accounts(&self) -> Vec<FlowAccount> {
        let mut acc: Vec<FlowAccount> = self
            .flows
            .iter()
            .map(|f| FlowAccount {
                flow: f.id,
                generated: f.payload_bytes,
                delivered: f.delivered_bytes,
                in_flight: 0,
                queued: 0,
            })
            .collect();
        for (i, src) in self.sources.iter().enumerate() {
            match &src.endpoint {
                Endpoint::Coap(end) => {
                    let expected = end.receiver.expected();
                    let mut delivered = true;
                    for e in end.window.unacked() {
                        delivered &= e.message_id != expected;
                        if !delivered {
                            acc[e.item.flow as usize].in_flight += e.item.msg.payload.len() as u64;
                        }
                    }
                    for e in end.window.queued() {
                        acc[e.item.flow as usize].queued += e.item.msg.payload.len() as u64;
                    }
                }
                Endpoint::Mqtt(end) => {
                    let parsed = end.server.rcv_nxt() - self.broker.buffered(i as u32) as u64;
                    let sent = end.client.snd_max();
                    for pf in &src.producer {
                        let a = &mut acc[pf.flow as usize];
                        for &(lo, hi) in &pf.spans {
                            let overlap = |x: u64, y: u64| hi.min(y).saturating_sub(lo.max(x));
                            a.in_flight += overlap(parsed, sent);
                            a.queued += overlap(sent, u64::MAX);
                        }
                    }
                }
                Endpoint::Cold => {}
            }
        }
        acc
    }

    fn finish(self) -> RunResult {
        let measured: Vec<&FlowRecord> = self.flows.iter().filter(|f| !f.warmup).collect();
        let start = measured.first().map(|f| f.created_at).unwrap_or(SimTime::ZERO);
        let mut end = self.flows.last().map(|f| f.created_at).unwrap_or(SimTime::ZERO);
        if end <= start {
            end = measured
                .iter()
                .filter_map(|f| f.completed_at)
                .max()
                .unwrap_or(start);
        }
        let window = end.saturating_sub(start);
        // An exchange counts once its whole payload has reached the consumer.
        let in_window: u64 = self
            .flows
            .iter()
            .filter(|f| f.delivered_at.is_some_and(|d| d >= start && d <= end))
            .map(|f| f.payload_bytes)
            .sum();
        let goodput = if window > SimTime::ZERO {
            in_window as f64 / window.as_secs_f64()
        } else {
            0.0
        };

        let first_block = self.channel.first_block_from(start);
        let end_block = self.channel.block_at(end);
        let n_blocks = end_block.saturating_sub(first_block);
        // Under overload a block can carry more bursts than it has slots.
        let top = self.block_load.iter().map(|&(_, c)| c as usize).max().unwrap_or(0);
        let mut hist = vec![0u64; top.max(self.channel.slots_per_block) + 1];
        let mut busy_blocks = 0;
        for &(k, c) in &self.block_load {
            if k >= first_block && k < end_block {
                hist[c as usize] += 1;
                busy_blocks += 1;
            }
        }
        hist[0] += n_blocks - busy_blocks;
        let load = load_from_hist(&hist, self.channel.slots_per_block);

        let mut rows = Vec::new();
        let mut incomplete = 0;
        for f in &measured {
            match f.completion_time() {
                Some(c) => rows.push(FlowRow {
                    flow_id: f.id,
                    source: f.source,
                    n_app_packets: f.n_app_packets,
                    payload_bytes: f.payload_bytes,
                    created_s: f.created_at.as_secs_f64(),
                    completion_s: c,
                }),
                None => incomplete += 1,
            }
        }
        let (mut arq_timeouts, mut ooo, mut st_timeouts, mut st_retx) = (0, 0, 0, 0);
        for s in &self.sources {
            match &s.endpoint {
                Endpoint::Coap(e) => {
                    arq_timeouts += e.window.timeouts();
                    ooo += e.receiver.out_of_order();
                }
                Endpoint::Mqtt(e) => {
                    for ep in [&e.client, &e.server] {
                        st_timeouts += ep.stats().timeouts;
                        st_retx += ep.stats().retransmitted_segments;
                    }
                }
                Endpoint::Cold => {}
            }
        }
        let summary = Summary {
            exchanges: self.flows.len() as u64,
            measured_flows: rows.len() as u64,
            incomplete_flows: incomplete,
            truncated_payloads: self.c.truncated,
            flows_verified: self.c.verified,
            hash_mismatches: self.c.hash_mismatches,
            generated_bytes: self.flows.iter().map(|f| f.payload_bytes).sum(),
            delivered_bytes: self.flows.iter().map(|f| f.delivered_bytes).sum(),
            window_start_s: start.as_secs_f64(),
            window_s: window.as_secs_f64(),
            goodput_bps: goodput,
            load_mean: load.mean,
            load_p25: load.p25,
            load_p75: load.p75,
            blocks_observed: load.blocks,
            mac_bursts: self.c.bursts,
            mac_lost_bursts: self.c.lost,
            mac_retransmissions: self.rcsts.iter().map(|r| r.queue.retransmissions()).sum(),
            return_wire_bytes: self.c.wire_bytes,
            arq_timeouts,
            arq_out_of_order: ooo,
            stream_timeouts: st_timeouts,
            stream_retransmissions: st_retx,
            peak_in_flight: self.c.peak_on_air,
            sim_end_s: self.sched.now().as_secs_f64(),
        };
        let accounts = self.accounts();
        RunResult {
            accounts,
            report: MetricsReport {
                scenario: self.sc.name.clone(),
                seed: self.sc.seed,
                protocol: self.sc.protocol,
                nstart: self.sc.nstart(),
                flows: rows,
                summary,
            },
            flows: self.flows,
        }
    }
}

fn encode_segment(src: u32, dst: u32, seg: &Segment) -> Vec<u8> {
    let total = crate::transport::NET_HEADER_LEN + seg.wire_len();
    let mut out = Vec::with_capacity(total);
    NetHeader {
        protocol: NetProtocol::Tcp,
        src,
        dst,
        total_len: total as u16,
    }
    .encode_into(&mut out);
    seg.encode_into(&mut out);
    out
}

fn set_timer(
    sched: &mut Scheduler<Ev>,
    slot: &mut Option<EventHandle>,
    cmd: TimerCmd,
    ev: Ev,
) -> Result<()> {
    match cmd {
        TimerCmd::Keep => {}
        TimerCmd::Disarm => {
            if let Some(h) = slot.take() {
                sched.cancel(h);
            }
        }
        TimerCmd::Arm(at) => {
            if let Some(h) = slot.take() {
                sched.cancel(h);
            }
            *slot = Some(sched.schedule(at, ev)?);
        }
    }
    Ok(())
}
