const fs = require('fs');
fs.writeFileSync('payload.txt', 'attack body');
const mod = require('./a.js');
mod.run('payload.txt');
