//! Attacking an embedding service over the wire.

use std::sync::Arc;

use invlab::defenses::DefenseConfig;
use invlab::harness::eaas::{eaas_serve, EaasClient, EaasService, RemoteEmbedder};
use invlab::inversion::{invert, AttackConfig, EditGenerator};
use invlab::{BlackBoxEmbedder, NgramConfig, NgramEmbedder};

fn main() -> invlab::Result<()> {
    let config = NgramConfig {
        dim: 128,
        ..NgramConfig::default()
    };
    let service = EaasService::new(Arc::new(NgramEmbedder::new(config)?), DefenseConfig::none());
    let server = eaas_serve(service, "127.0.0.1:0")?;

    let mut client = EaasClient::connect(server.addr())?;
    println!(
        "> invert request: {}",
        client.send_raw(r#"{"op":"invert","texts":["x"]}"#)?
    );

    // A leaked vector plus API access is all the attacker needs.
    let remote = RemoteEmbedder::connect(server.addr(), config.dim)?;
    let leaked = remote.embed("red fox jumps")?;
    let attack = AttackConfig::new(
        ["fox", "jumps", "red", "slow"].map(String::from).to_vec(),
        20,
        4,
        3,
    );
    let r = invert(
        &leaked,
        &remote,
        &EditGenerator::for_attack(&attack, 0)?,
        &attack,
    )?;
    println!(
        "recovered {:?} with {} queries over the wire",
        r.best.text, r.queries_used
    );
    server.stop();
    Ok(())
}
