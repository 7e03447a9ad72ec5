// path_traversal harness: the executor pre-writes the sentinel file; the
// exploit must read it through the vulnerability and print its contents.
/*%%EXPLOIT_CODE%%*/
