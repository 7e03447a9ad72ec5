// code_injection harness: defines the marker function the injected payload
// must call. %%TOKEN%% is replaced with the success token before execution.
global.CTF = function () { console.log("%%TOKEN%%"); };
/*%%EXPLOIT_CODE%%*/
