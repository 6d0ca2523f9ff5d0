//! Encoding an object into N coded elements and decoding it from any k.

use casss::codec::{element_len, Codec};

fn main() -> Result<(), casss::codec::CodecError> {
    let (n, k) = (10, 6);
    let data: Vec<u8> = (0..100_000u32).map(|i| (i * 31 % 251) as u8).collect();
    let codec = Codec::new(n, k)?;
    let elements = codec.encode(&data)?;
    println!("{} bytes -> {n} elements of {} bytes (rate {k}/{n})", data.len(), element_len(data.len(), k));

    let survivors: Vec<_> = elements.iter().filter(|e| e.index % 5 != 1).take(k).cloned().collect();
    let idx: Vec<usize> = survivors.iter().map(|e| e.index).collect();
    assert_eq!(codec.decode(&survivors)?, data);
    println!("decoded from elements {idx:?}");

    match codec.decode(&survivors[..k - 1]) {
        Err(e) => println!("with {} elements: {e}", k - 1),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
