use std::net::Ipv4Addr;
use std::time::Duration;

use clap::{Args, Subcommand};

use synproxy_core::cookie::{encode_cookie, tick, verify_cookie, Cookie, CookieKey, MssTable};
use synproxy_core::packet::FlowKey;

use crate::{exit, Failure};

#[derive(Subcommand)]
pub enum CookieCommand {
    /// Print the cookie a SYN with these fields would get.
    Encode {
        #[command(flatten)]
        common: Common,
        /// MSS the client offered; omit for none.
        #[arg(long)]
        mss: Option<u16>,
    },
    /// Check the acknowledgment number of a handshake-completing ACK.
    Verify {
        #[command(flatten)]
        common: Common,
        /// The ACK's acknowledgment number (cookie + 1), decimal or 0x hex.
        #[arg(long, value_parser = parse_u32)]
        ack: u32,
        /// Ticks of age accepted.
        #[arg(long, default_value_t = 1)]
        window: u8,
    },
}

/// The tuple the cookie is computed over is that of the SYN/ACK carrying it,
/// so `--src` is the server side and `--dst` the client.
#[derive(Args)]
pub struct Common {
    /// 32 hex digits.
    #[arg(long)]
    key: String,
    #[arg(long)]
    src: Ipv4Addr,
    #[arg(long)]
    dst: Ipv4Addr,
    #[arg(long)]
    sport: u16,
    #[arg(long)]
    dport: u16,
    /// Clock in seconds.
    #[arg(long, default_value_t = 0.0)]
    now: f64,
}

fn parse_u32(s: &str) -> Result<u32, String> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u32::from_str_radix(hex, 16),
        None => s.parse(),
    }
    .map_err(|e| format!("{s:?}: {e}"))
}

impl Common {
    fn resolve(&self) -> Result<(CookieKey, FlowKey, Duration), Failure> {
        let key =
            CookieKey::from_hex(&self.key).map_err(|e| Failure::invalid(format!("--key: {e}")))?;
        if !self.now.is_finite() || self.now < 0.0 {
            return Err(Failure::invalid(
                "--now must be a non-negative number of seconds",
            ));
        }
        let flow = FlowKey::new(self.src, self.sport, self.dst, self.dport);
        Ok((key, flow, Duration::from_secs_f64(self.now)))
    }
}

pub fn run(c: CookieCommand) -> Result<u8, Failure> {
    let table = MssTable::default();
    match c {
        CookieCommand::Encode { common, mss } => {
            let (key, flow, now) = common.resolve()?;
            let v = encode_cookie(&key, &flow, now, mss, &table);
            let parts = Cookie::unpack(v);
            println!("cookie 0x{v:08x}");
            println!("t5 {}", parts.t5());
            println!(
                "mss_idx {} ({})",
                parts.mss_idx(),
                table.get(parts.mss_idx())
            );
            println!("hash24 0x{:06x}", parts.hash24());
            println!("tick {}", tick(now));
            Ok(0)
        }
        CookieCommand::Verify {
            common,
            ack,
            window,
        } => {
            let (key, flow, now) = common.resolve()?;
            if window > synproxy_core::cookie::MAX_WINDOW {
                return Err(Failure::invalid(format!(
                    "--window must be at most {}",
                    synproxy_core::cookie::MAX_WINDOW
                )));
            }
            match verify_cookie(&key, &flow, ack, now, window, &table) {
                Ok(mss) => {
                    println!("ACCEPT {mss}");
                    Ok(0)
                }
                Err(r) => {
                    println!("REJECT {}", r.as_str());
                    Ok(exit::REJECT)
                }
            }
        }
    }
}
