//! Remote consumer side: in-order acceptance with cumulative ACKs.

use super::message::{CoapMessage, MessageType};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Delivery {
    /// Next expected message; payload handed to the application.
    InOrder(Vec<u8>),
    /// Already delivered.
    Duplicate,
    /// Ahead of the expected id; discarded.
    OutOfOrder,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReceiveOutcome {
    pub delivery: Delivery,
    /// ACK to return, echoing the last in-order message id.
    pub ack: Option<CoapMessage>,
}

/// Per-registration receiver. Message ids are expected to start at 0 and
/// increase by one, wrapping at 2^16.
#[derive(Clone, Debug, Default)]
pub struct CoapReceiver {
    expected: u16,
    delivered_any: bool,
    delivered: u64,
    duplicates: u64,
    out_of_order: u64,
}

impl CoapReceiver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Next in-order message id.
    pub fn expected(&self) -> u16 {
        self.expected
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn out_of_order(&self) -> u64 {
        self.out_of_order
    }

    pub fn client_receive(&mut self, msg: &CoapMessage) -> ReceiveOutcome {
        let delivery = if msg.message_id == self.expected {
            self.expected = self.expected.wrapping_add(1);
            self.delivered_any = true;
            self.delivered += 1;
            Delivery::InOrder(msg.payload.clone())
        } else if self.expected.wrapping_sub(msg.message_id) <= 0x8000 {
            self.duplicates += 1;
            Delivery::Duplicate
        } else {
            self.out_of_order += 1;
            Delivery::OutOfOrder
        };
        let ack = (msg.mtype == MessageType::Confirmable && self.delivered_any)
            .then(|| CoapMessage::ack(self.expected.wrapping_sub(1)));
        ReceiveOutcome { delivery, ack }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(id: u16, b: u8) -> CoapMessage {
        let mut m = CoapMessage::notification(&[0, 0, 1], id as u32, vec![b; 4]);
        m.message_id = id;
        m
    }

    #[test]
    fn duplicate_is_delivered_once() {
        let mut r = CoapReceiver::new();
        let a = r.client_receive(&msg(0, 1));
        assert_eq!(a.delivery, Delivery::InOrder(vec![1; 4]));
        assert_eq!(a.ack.unwrap().message_id, 0);
        let b = r.client_receive(&msg(0, 1));
        assert_eq!(b.delivery, Delivery::Duplicate);
        assert_eq!(b.ack.unwrap().message_id, 0);
        assert_eq!(r.delivered(), 1);
    }

    #[test]
    fn gap_is_discarded_and_last_in_order_reacked() {
        let mut r = CoapReceiver::new();
        r.client_receive(&msg(0, 0));
        let o = r.client_receive(&msg(2, 2));
        assert_eq!(o.delivery, Delivery::OutOfOrder);
        assert_eq!(o.ack.unwrap().message_id, 0);
        assert!(matches!(
            r.client_receive(&msg(1, 1)).delivery,
            Delivery::InOrder(_)
        ));
        assert!(matches!(
            r.client_receive(&msg(2, 2)).delivery,
            Delivery::InOrder(_)
        ));
    }

    #[test]
    fn nothing_to_ack_before_first_delivery() {
        let mut r = CoapReceiver::new();
        assert!(r.client_receive(&msg(3, 0)).ack.is_none());
    }

    #[test]
    fn ids_wrap() {
        let mut r = CoapReceiver::new();
        for i in 0..70_000u32 {
            let o = r.client_receive(&msg(i as u16, 0));
            assert!(matches!(o.delivery, Delivery::InOrder(_)));
        }
        assert_eq!(r.delivered(), 70_000);
    }
}
