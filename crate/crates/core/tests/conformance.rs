use std::path::PathBuf;

use orbit5gc_core::nas::{parse_vectors, IeTag, MessageType};

fn repo_file(rel: &str) -> String {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", rel]
        .iter()
        .collect();
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn shipped_vectors_pass_bit_exactly() {
    let vectors = parse_vectors(&repo_file("vectors/nas.tsv")).unwrap();
    assert!(vectors.len() >= MessageType::ALL.len());
    for v in &vectors {
        v.check()
            .unwrap_or_else(|f| panic!("line {}: {}", f.line, f.reason));
    }
    for mt in MessageType::ALL {
        assert!(
            vectors.iter().any(|v| v.bytes[1] == mt.code()),
            "no vector for {mt}"
        );
    }
}

#[test]
fn corrupted_vector_is_caught() {
    let mut v = parse_vectors(&repo_file("vectors/nas.tsv"))
        .unwrap()
        .remove(0);
    let last = v.bytes.len() - 1;
    v.bytes[last] ^= 0x01;
    assert!(v.check().is_err());
}

fn tags(field: &str) -> Vec<IeTag> {
    field
        .split(';')
        .filter(|s| !s.is_empty())
        .map(|s| IeTag::from_name(s).unwrap_or_else(|| panic!("unknown IE {s}")))
        .collect()
}

#[test]
fn documented_ie_table_matches_the_codec() {
    let csv = repo_file("docs/nas_mandatory_ies.csv");
    let mut rows = csv.lines();
    assert_eq!(
        rows.next(),
        Some("message_type,code,direction,mandatory,optional")
    );
    let mut seen = Vec::new();
    for row in rows.filter(|r| !r.is_empty()) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 5, "{row}");
        let mt: MessageType = cols[0].parse().unwrap();
        let code = u8::from_str_radix(cols[1].trim_start_matches("0x"), 16).unwrap();
        assert_eq!(mt.code(), code, "{row}");
        assert_eq!(mt.is_downlink(), cols[2] == "downlink", "{row}");
        let rules = mt.rules();
        assert_eq!(rules.mandatory, tags(cols[3]).as_slice(), "{row}");
        assert_eq!(rules.optional, tags(cols[4]).as_slice(), "{row}");
        seen.push(mt);
    }
    assert_eq!(seen, MessageType::ALL);
}
