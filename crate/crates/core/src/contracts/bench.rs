//! Load-generator contract: a bare read-modify-write used by the
//! throughput benches and the commit-path stress tests.

use crate::chaincode::{ContractError, InvocationContext, RuleSet, TxSim};

pub fn invoke(
    _rules: &RuleSet,
    ctx: &InvocationContext,
    sim: &mut TxSim,
) -> Result<Option<String>, ContractError> {
    match ctx.function {
        "put" => {
            let key = ctx.arg(0)?;
            let value = ctx.arg(1)?;
            // read first so every tx carries a version check like the
            // clinical contracts do
            sim.get(key);
            sim.put(key, value.as_bytes().to_vec());
            Ok(None)
        }
        other => Err(ContractError::UnknownFunction(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use crate::chaincode::ContractKind;
    use crate::contracts::testkit::Harness;
    use crate::ledger::Version;

    #[test]
    fn put_reads_then_writes() {
        let mut h = Harness::new(ContractKind::Bench, "bench");
        let r = h.call("cc-1", "put", &["k/1", "v1"]).unwrap();
        assert_eq!(r.read_set, vec![("k/1".to_string(), Version::ABSENT)]);
        assert_eq!(h.ledger.get_state("k/1").unwrap().0, b"v1");
        let r = h.call("cc-1", "put", &["k/1", "v2"]).unwrap();
        assert_eq!(r.read_set[0].1, Version::new(1, 0));
        assert_eq!(h.ledger.get_state("k/1").unwrap().0, b"v2");
    }
}
