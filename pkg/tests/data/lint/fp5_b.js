const server = require('./a.js');
server.emit('request', { url: '/steal' }, { end() {} });
