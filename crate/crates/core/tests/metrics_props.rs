use proptest::prelude::*;
use teamprod::metrics::{commit_code_delta, file_metrics, halstead_effort, tokenize, LanguageProfile, TokenClass};

fn python_line() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{1,6}".prop_map(|v| format!("{v} = {v} + 1")),
        "[a-z]{1,6}".prop_map(|v| format!("def {v}(x, y):")),
        "[a-z]{1,6}".prop_map(|v| format!("    return {v} * 2")),
        "[a-z]{1,6}".prop_map(|v| format!("    if {v} > 3 and {v} < 9:")),
        "[a-z]{1,6}".prop_map(|v| format!("# {v}")),
        Just(String::new()),
        "[a-z]{1,6}".prop_map(|v| format!("print(\"{v}\", '{v}')")),
    ]
}

fn python_text() -> impl Strategy<Value = String> {
    prop::collection::vec(python_line(), 0..15).prop_map(|ls| ls.iter().map(|l| format!("{l}\n")).collect())
}

fn c_text() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            "[a-z]{1,5}".prop_map(|v| format!("int {v}(int a) {{ return a + 1; }}")),
            "[a-z]{1,5}".prop_map(|v| format!("if ({v} && x) {{ y = {v}; }}")),
            "[a-z]{1,5}".prop_map(|v| format!("// {v}")),
            "[a-z]{1,5}".prop_map(|v| format!("/* {v} */ z = 0;")),
        ],
        0..12,
    )
    .prop_map(|ls| ls.iter().map(|l| format!("{l}\n")).collect())
}

proptest! {
    #[test]
    fn tokens_are_conserved(text in python_text(), c in c_text()) {
        for (text, p) in [(text, LanguageProfile::python()), (c, LanguageProfile::clike())] {
            let m = file_metrics(&text, &p);
            let other = tokenize(&text, &p).iter().filter(|t| t.class == TokenClass::Other).count() as u64;
            prop_assert_eq!(m.token_count, m.halstead.n1 + m.halstead.n2 + other);
        }
    }

    #[test]
    fn appending_a_code_line_adds_one_nloc(text in python_text(), v in "[a-z]{1,6}") {
        let p = LanguageProfile::python();
        let before = file_metrics(&text, &p).nloc;
        let after = file_metrics(&format!("{text}{v} = 1\n"), &p).nloc;
        prop_assert_eq!(after, before + 1);
    }

    #[test]
    fn effort_zero_iff_degenerate(eta1 in 0u64..20, eta2 in 0u64..20, n1 in 0u64..50, n2 in 0u64..50) {
        let e = halstead_effort(eta1, eta2, n1, n2);
        prop_assert!(e >= 0.0);
        let degenerate = n1 + n2 == 0 || eta2 == 0 || eta1 == 0 || n2 == 0;
        prop_assert_eq!(e == 0.0, degenerate);
    }

    #[test]
    fn file_effort_zero_iff_a_class_is_missing(text in python_text()) {
        let h = file_metrics(&text, &LanguageProfile::python()).halstead;
        prop_assert_eq!(h.effort == 0.0, h.n1 == 0 || h.n2 == 0);
        prop_assert_eq!(h.eta1 == 0, h.n1 == 0);
        prop_assert_eq!(h.eta2 == 0, h.n2 == 0);
    }

    #[test]
    fn code_delta_is_symmetric(a in python_text(), b in python_text()) {
        let p = LanguageProfile::python();
        let (ma, mb) = (file_metrics(&a, &p), file_metrics(&b, &p));
        prop_assert_eq!(commit_code_delta(&ma, &mb), commit_code_delta(&mb, &ma));
        prop_assert_eq!(commit_code_delta(&ma, &ma), Default::default());
    }
}
