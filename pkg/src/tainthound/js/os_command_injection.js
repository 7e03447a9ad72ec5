// os_command_injection harness: the oracle is filesystem-based (creation of a
// sentinel file), so the exploit runs bare with no probe code around it.
/*%%EXPLOIT_CODE%%*/
