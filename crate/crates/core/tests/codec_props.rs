use proptest::prelude::*;

use mtrace_core::engines::{decode_thinking, encode_thinking, ThinkingDelimiters};

fn trace_text() -> impl Strategy<Value = String> {
    // includes '<', '/', '>' so near-miss delimiters show up
    "[a-z <>/\nthink\u{00e9}\u{4e2d}]{0,60}".prop_filter("no delimiters", |s| {
        !s.contains("<think>") && !s.contains("</think>")
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn decode_inverts_encode(trace in trace_text(), final_text in "[a-z <>/\n\u{00e9}]{0,60}") {
        let d = ThinkingDelimiters::default();
        let raw = encode_thinking(&trace, &final_text, &d).unwrap();
        prop_assert_eq!(decode_thinking(&raw, &d), (trace, final_text));
    }

    #[test]
    fn custom_delimiters_round_trip(trace in "[a-z ]{0,30}", final_text in "[a-z ]{0,30}") {
        let d = ThinkingDelimiters::new("[[R]]", "[[/R]]").unwrap();
        let raw = encode_thinking(&trace, &final_text, &d).unwrap();
        prop_assert_eq!(decode_thinking(&raw, &d), (trace, final_text));
    }

    #[test]
    fn traces_with_delimiters_are_rejected(a in "[a-z]{0,10}", b in "[a-z]{0,10}") {
        let d = ThinkingDelimiters::default();
        let with_close = format!("{a}</think>{b}");
        let with_open = format!("{a}<think>{b}");
        prop_assert!(encode_thinking(&with_close, "x", &d).is_err());
        prop_assert!(encode_thinking(&with_open, "x", &d).is_err());
    }

    #[test]
    fn undelimited_text_is_all_final(text in "[a-z ]{0,40}") {
        let d = ThinkingDelimiters::default();
        prop_assert_eq!(decode_thinking(&text, &d), (String::new(), text.clone()));
    }
}
