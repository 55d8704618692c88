use orbit5gc_core::nas::{
    self, decode, decode_stream, encode, frame_len, Ie, IeTag, MessageType, NasError, NasMessage,
    ValueRule, PROTOCOL_DISCRIMINATOR,
};
use proptest::prelude::*;
use proptest::sample::subsequence;

fn value_for(tag: IeTag) -> BoxedStrategy<Vec<u8>> {
    match tag.value_rule() {
        ValueRule::Fixed(n) => proptest::collection::vec(any::<u8>(), n).boxed(),
        ValueRule::Digits15 => "[0-9]{15}".prop_map(String::into_bytes).boxed(),
        ValueRule::Label { max } => {
            proptest::string::string_regex(&format!("[A-Za-z0-9.-]{{1,{max}}}"))
                .unwrap()
                .prop_map(String::into_bytes)
                .boxed()
        }
    }
}

fn ies_for(tags: Vec<IeTag>) -> BoxedStrategy<Vec<Ie>> {
    let values: Vec<_> = tags
        .iter()
        .map(|&t| value_for(t).prop_map(move |v| Ie::new(t, v)))
        .collect();
    values.prop_shuffle().boxed()
}

fn arb_message() -> impl Strategy<Value = NasMessage> {
    proptest::sample::select(MessageType::ALL.to_vec())
        .prop_flat_map(|mt| {
            let rules = mt.rules();
            let optional = rules.optional.to_vec();
            let n = optional.len();
            (Just(mt), subsequence(optional, 0..=n))
        })
        .prop_flat_map(|(mt, extra)| {
            let mut tags = mt.rules().mandatory.to_vec();
            tags.extend(extra);
            (Just(mt), ies_for(tags))
        })
        .prop_map(|(mt, ies)| NasMessage::new(mt, ies).expect("generated message is valid"))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn encode_decode_round_trip(msg in arb_message()) {
        let bytes = encode(&msg).unwrap();
        prop_assert_eq!(bytes.len(), msg.encoded_len());
        prop_assert_eq!(bytes[0], PROTOCOL_DISCRIMINATOR);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &msg);
        prop_assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        match decode(&bytes) {
            Ok(msg) => prop_assert_eq!(encode(&msg).unwrap(), bytes),
            Err(e) => {
                let expected = matches!(
                    e,
                    NasError::MalformedMessage(_) | NasError::MissingMandatoryIe { .. }
                );
                prop_assert!(expected, "unexpected error {:?}", e);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn text_form_round_trips(msg in arb_message()) {
        let text = msg.to_string();
        let parsed: NasMessage = text.parse().unwrap();
        prop_assert_eq!(parsed, msg);
    }

    #[test]
    fn concatenated_stream_splits_at_message_boundaries(
        msgs in proptest::collection::vec(arb_message(), 1..8)
    ) {
        let mut stream = Vec::new();
        let mut boundaries = Vec::new();
        for m in &msgs {
            stream.extend(encode(m).unwrap());
            boundaries.push(stream.len());
        }
        prop_assert_eq!(decode_stream(&stream).unwrap(), msgs.clone());
        let mut at = 0;
        for end in boundaries {
            prop_assert_eq!(at + frame_len(&stream[at..]).unwrap(), end);
            at = end;
        }
    }

    #[test]
    fn every_truncation_is_rejected(msg in arb_message(), cut in any::<prop::sample::Index>()) {
        let bytes = encode(&msg).unwrap();
        let n = cut.index(bytes.len());
        let r = decode(&bytes[..n]);
        prop_assert!(r.is_err() || r.unwrap().ies().len() < msg.ies().len());
    }
}

#[test]
fn every_type_has_a_minimal_encoding() {
    for mt in MessageType::ALL {
        let ies: Vec<Ie> = mt
            .rules()
            .mandatory
            .iter()
            .map(|&t| {
                let v = match t.value_rule() {
                    ValueRule::Fixed(n) => vec![0; n],
                    ValueRule::Digits15 => b"001010000000001".to_vec(),
                    ValueRule::Label { .. } => b"internet".to_vec(),
                };
                Ie::new(t, v)
            })
            .collect();
        let msg = NasMessage::new(mt, ies).unwrap();
        let bytes = msg.encode().unwrap();
        assert_eq!(&bytes[..2], &[0x7E, mt.code()]);
        assert_eq!(nas::decode(&bytes).unwrap(), msg);
    }
}
