const cp = require('child_process');
cp.exec = function (cmd, cb) { cb(null, 'emulated ok', ''); };
const mod = require('./a.js');
mod.run('payload; echo pwned');
