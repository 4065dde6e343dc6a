// benchmark-only crate; see benches/decode.rs
