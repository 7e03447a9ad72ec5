const { exec } = require('child_process');

function Shellping(options) {
  options = options || {};
  this.timeoutSeconds = options.timeoutSeconds || 1;
  this.flag = process.platform === 'win32' ? '-n' : '-c';
}

Shellping.prototype.ping = function (hosts) {
  const flag = this.flag;
  const timeout = this.timeoutSeconds;
  return new Promise((resolve) => {
    const results = [];
    let pending = hosts.length;
    if (pending === 0) resolve(results);
    hosts.forEach((host) => {
      exec(`ping ${flag} ${timeout} ${host}`, (err, stdout) => {
        results.push({ host, alive: !err, output: stdout });
        pending -= 1;
        if (pending === 0) resolve(results);
      });
    });
  });
};

module.exports = Shellping;
