fn main() -> satloc::Result<()> {
    let r = satloc::harness::gradient_check(500, 0)?;
    println!("{r:#?}");
    println!("worst relative error {:.2e}", r.max());
    Ok(())
}
