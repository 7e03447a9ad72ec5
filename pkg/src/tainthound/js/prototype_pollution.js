// prototype_pollution harness: snapshots Object.prototype before the exploit
// and afterwards checks whether a freshly created empty object inherits an
// attacker-set property. Checked keys are a deny list (%%PROBE_KEYS%%) plus
// every own property added to Object.prototype during the run; an overridden
// toString is detected by reference comparison. %%TOKEN%% is replaced with
// the success token before execution.
var __probeBaseline = Object.getOwnPropertyNames(Object.prototype);
var __probeToString = Object.prototype.toString;
/*%%EXPLOIT_CODE%%*/
(function () {
  // Set, not a plain object: a plain map would itself inherit the pollution.
  var before = new Set(__probeBaseline);
  var probe = {};
  var keys = %%PROBE_KEYS%%;
  var after = Object.getOwnPropertyNames(Object.prototype);
  for (var i = 0; i < after.length; i++) {
    if (!before.has(after[i])) keys.push(after[i]);
  }
  var polluted = false;
  for (var j = 0; j < keys.length; j++) {
    var key = keys[j];
    if (Object.prototype.hasOwnProperty.call(probe, key)) continue;
    if (key in probe && !before.has(key)) { polluted = true; break; }
  }
  if (Object.prototype.toString !== __probeToString) polluted = true;
  if (polluted) console.log("%%TOKEN%%");
})();
