@problemName Multi3
@univariate false
@dimensions 3
@equalLength true
@seriesLength 3
@classLabel true up down
@data
0.1,0.2,0.3:1.1,1.2,1.3:-0.1,-0.2,-0.3:down
3,2,1:0,0,0:9,9,9:up
1e2,2e2,3e2:4,5,6:7,8,9:down
